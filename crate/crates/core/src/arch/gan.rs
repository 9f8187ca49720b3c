use crate::arch::discriminator::{Discriminator, DiscriminatorDesign, DiscriminatorSpec};
use crate::arch::generator::{check_input_size, Generator, GeneratorSpec, Topology};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Bound;
use crate::tensor::{Element, Tensor};

/// A segmentation generator paired with a discriminator that scores
/// `(ground truth ‖ segmentation)` pairs.
#[derive(Debug, Clone)]
pub struct GanModel<T: Element = f32> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    height: usize,
    width: usize,
}

impl<T: Element> GanModel<T> {
    /// Builds both networks for `height x width` images. The discriminator
    /// input is the flattened ground truth and prediction side by side.
    pub fn build(
        gen_spec: GeneratorSpec,
        design: DiscriminatorDesign,
        height: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        check_input_size(height, width)?;
        let generator = Generator::build(gen_spec, seed)?;
        let input_width = 2 * gen_spec.out_channels * height * width;
        let discriminator = Discriminator::build(DiscriminatorSpec::new(design, input_width), seed)?;
        Ok(Self {
            generator,
            discriminator,
            height,
            width,
        })
    }

    pub fn from_parts(generator: Generator<T>, discriminator: Discriminator<T>, height: usize, width: usize) -> Result<Self> {
        let expected = 2 * generator.spec().out_channels * height * width;
        if discriminator.spec().input_width != expected {
            return Err(Error::Config(format!(
                "discriminator input width {} does not match 2 x {}x{} generator output",
                discriminator.spec().input_width,
                height,
                width
            )));
        }
        Ok(Self {
            generator,
            discriminator,
            height,
            width,
        })
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Flat discriminator input `(truth ‖ sigmoid(candidate_logits))`.
    pub fn pair_from_logits(g: &mut Graph<T>, truth: Var, candidate_logits: Var) -> Result<Var> {
        let prob = g.sigmoid(candidate_logits)?;
        Self::pair(g, truth, prob)
    }

    /// Flat discriminator input `(truth ‖ candidate)` for a candidate already in [0, 1].
    pub fn pair(g: &mut Graph<T>, truth: Var, candidate: Var) -> Result<Var> {
        let t = g.flatten(truth)?;
        let c = g.flatten(candidate)?;
        g.concat(&[t, c], 0)
    }

    /// Generator logits; identical to running the generator alone.
    pub fn generate(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(self.generator.forward(g, p, x)?.logits)
    }

    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.generator.predict(image)
    }
}

/// The two combined networks named in the comparison study.
pub fn combined_network(index: u8) -> Option<(Topology, DiscriminatorDesign)> {
    match index {
        1 => Some((Topology::AdvancedAttentionUnet, DiscriminatorDesign::D6)),
        2 => Some((Topology::FullAttentionUnet, DiscriminatorDesign::D4V)),
        _ => None,
    }
}
