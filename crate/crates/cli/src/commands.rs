use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use segattn::arch::{
    Checkpoint, Discriminator, DiscriminatorDesign, DiscriminatorSpec, GanModel, Generator, GeneratorSpec, SavedModel,
    Topology,
};
use segattn::data::{generate_synthetic, write_dataset, write_pgm, Split, SyntheticStyle};
use segattn::gradcheck;
use segattn::metrics::{binarize, evaluate_and_rank, EmptyClass, MetricsReport, ModelPredictions, Scope};
use segattn::nn::UpsampleMode;
use segattn::train::{train_adversarial_observed, train_supervised_observed, LossRecord, TrainConfig};

use crate::config::{Settings, DATA_KEYS};
use crate::dataset::{parse_size, DataSpec};
use crate::CliError;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Report name used when none is given: the generator alone, or
/// `GAN + D-x` for a U-net generator trained adversarially.
pub fn default_name(topology: Topology, disc: Option<DiscriminatorDesign>) -> String {
    match disc {
        None => topology.display_name().to_string(),
        Some(d) if topology == Topology::Unet => format!("GAN + {}", d.display_name()),
        Some(d) => format!("{} + {}", topology.display_name(), d.display_name()),
    }
}

fn parse_upsample(s: &str) -> Result<UpsampleMode, CliError> {
    match s {
        "transposed" => Ok(UpsampleMode::Transposed),
        "nearest" => Ok(UpsampleMode::Nearest),
        other => Err(usage(format!(
            "invalid value `{other}` for `upsample`: expected transposed or nearest"
        ))),
    }
}

fn comments(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn loss_csv(header: &[String], records: &[LossRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
    let mut out = comments(header);
    out.push_str("epoch,generator_loss,discriminator_loss,segmentation_bce,adversarial_bce\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.8},{},{:.8},{}",
            r.epoch + 1,
            r.generator_loss,
            opt(r.discriminator_loss),
            r.segmentation_bce,
            opt(r.adversarial_bce)
        );
    }
    out
}

pub fn train(s: Settings) -> Result<(), CliError> {
    let topology: Topology = s.parse("arch")?;
    let disc: Option<DiscriminatorDesign> = match s.get("disc") {
        "none" => None,
        _ => Some(s.parse("disc")?),
    };
    let mut spec = GeneratorSpec::new(topology, s.parse("base_channels")?);
    spec.upsample = parse_upsample(s.get("upsample"))?;
    spec.validate().map_err(usage)?;
    let data = DataSpec::from_settings(&s)?;
    let cfg = TrainConfig {
        learning_rate: s.parse("lr")?,
        beta1: s.parse("beta1")?,
        beta2: s.parse("beta2")?,
        epsilon: s.parse("eps")?,
        epochs: s.parse("epochs")?,
        batch_size: s.parse("batch_size")?,
        dropout: s.parse("dropout")?,
        lambda_adv: s.parse("lambda_adv")?,
        d_steps: s.parse("d_steps")?,
        seed: s.parse("seed")?,
        shuffle: s.bool("shuffle")?,
    };
    cfg.validate().map_err(usage)?;
    let name = match s.get("name") {
        "" => default_name(topology, disc),
        n => n.to_string(),
    };
    if name.contains([',', '\n']) {
        return Err(usage("`name` must not contain commas or newlines"));
    }
    let out = PathBuf::from(s.get("out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let samples = data.load(Split::Train)?;
    if samples.is_empty() {
        return Err(anyhow!("the training split is empty").into());
    }
    eprintln!(
        "training {name}: {} images of {}x{}, {} epochs",
        samples.len(),
        data.height,
        data.width,
        cfg.epochs
    );

    let mut records = Vec::new();
    let mut observer = |r: &LossRecord| {
        match r.discriminator_loss {
            Some(d) => eprintln!("epoch {:>4}/{}  G {:.6}  D {:.6}", r.epoch + 1, cfg.epochs, r.generator_loss, d),
            None => eprintln!("epoch {:>4}/{}  loss {:.6}", r.epoch + 1, cfg.epochs, r.generator_loss),
        }
        records.push(*r);
    };
    let (generator, discriminator, outcome) = match disc {
        None => {
            let mut g = Generator::build(spec, cfg.seed)?;
            let outcome = train_supervised_observed(&mut g, &samples, &cfg, &mut observer).map(drop);
            (g, None, outcome)
        }
        Some(design) => {
            let g = Generator::build(spec, cfg.seed)?;
            let mut dspec = DiscriminatorSpec::new(design, 2 * spec.out_channels * data.height * data.width);
            dspec.dropout = cfg.dropout;
            let d = Discriminator::build(dspec, cfg.seed)?;
            let mut gan = GanModel::from_parts(g, d, data.height, data.width)?;
            let outcome = train_adversarial_observed(&mut gan, &samples, &cfg, &mut observer).map(drop);
            (gan.generator, Some(gan.discriminator), outcome)
        }
    };
    let model = SavedModel {
        generator,
        discriminator,
        height: data.height,
        width: data.width,
    };

    let echo = s.echo();
    let status = if outcome.is_ok() { "complete" } else { "aborted" };
    let mut fields = BTreeMap::new();
    fields.insert("name".to_string(), name.clone());
    fields.insert("status".to_string(), status.to_string());
    for line in &echo {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(format!("cfg.{k}"), v.to_string());
        }
    }
    let ckpt_path = out.join("model.ckpt");
    model.to_checkpoint(&fields).save(&ckpt_path)?;
    write_file(&out.join("loss.csv"), &loss_csv(&echo, &records))?;

    let last = records.last();
    let mut manifest = comments(&echo);
    let _ = writeln!(manifest, "name={name}");
    let _ = writeln!(manifest, "arch={}", model.arch_tag());
    let _ = writeln!(manifest, "status={status}");
    let _ = writeln!(manifest, "epochs_completed={}", records.len());
    if let Some(r) = last {
        let _ = writeln!(manifest, "final_generator_loss={:.8}", r.generator_loss);
        if let Some(d) = r.discriminator_loss {
            let _ = writeln!(manifest, "final_discriminator_loss={d:.8}");
        }
    }
    let _ = writeln!(manifest, "checkpoint=model.ckpt");
    if let Err(e) = &outcome {
        let _ = writeln!(manifest, "error={e}");
    }
    write_file(&out.join("model.manifest"), &manifest)?;

    match outcome {
        Ok(()) => {
            println!("{}", ckpt_path.display());
            Ok(())
        }
        Err(e) => Err(anyhow!(e)
            .context(format!("training stopped; last finite state saved to {}", ckpt_path.display()))
            .into()),
    }
}

struct Loaded {
    path: PathBuf,
    name: String,
    ckpt: Checkpoint,
    model: SavedModel,
}

fn load_checkpoints(paths: &[String]) -> Result<Vec<Loaded>, CliError> {
    let mut out: Vec<Loaded> = Vec::with_capacity(paths.len());
    for p in paths {
        let path = PathBuf::from(p);
        let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
        let model = SavedModel::from_checkpoint(&ckpt).with_context(|| format!("restoring {}", path.display()))?;
        let name = match ckpt.fields.get("name") {
            Some(n) => n.clone(),
            None => default_name(
                model.generator.spec().topology,
                model.discriminator.as_ref().map(|d| d.spec().design),
            ),
        };
        if let Some(prev) = out.iter().find(|l| l.name == name) {
            return Err(usage(format!(
                "{} and {} are both named `{name}`; retrain one with a distinct `name`",
                prev.path.display(),
                path.display()
            )));
        }
        out.push(Loaded { path, name, ckpt, model });
    }
    Ok(out)
}

fn data_descriptor(ckpt: &Checkpoint) -> Vec<(&'static str, Option<&String>)> {
    DATA_KEYS
        .iter()
        .map(|k| (k.name, ckpt.fields.get(&format!("cfg.{}", k.name))))
        .collect()
}

/// Rejects checkpoint sets trained on different datasets or image sizes.
fn check_consistent(models: &[Loaded]) -> Result<(), CliError> {
    let first = &models[0];
    let reference = data_descriptor(&first.ckpt);
    for m in &models[1..] {
        for ((key, a), (_, b)) in reference.iter().zip(data_descriptor(&m.ckpt)) {
            if *a != b {
                let show = |v: Option<&String>| v.map(String::as_str).unwrap_or("<unrecorded>").to_string();
                return Err(anyhow!(
                    "inconsistent datasets: {} has {key}={}, {} has {key}={}",
                    first.path.display(),
                    show(*a),
                    m.path.display(),
                    show(b)
                )
                .into());
            }
        }
        if (m.model.height, m.model.width) != (first.model.height, first.model.width) {
            return Err(anyhow!(
                "inconsistent image sizes: {} is {}x{}, {} is {}x{}",
                first.path.display(),
                first.model.height,
                first.model.width,
                m.path.display(),
                m.model.height,
                m.model.width
            )
            .into());
        }
    }
    Ok(())
}

fn slug(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}

struct Scored {
    settings: Settings,
    report: MetricsReport,
    models: Vec<Loaded>,
    /// Binary predictions per model, aligned with `ids`.
    masks: Vec<Vec<segattn::Tensor<f32>>>,
    ids: Vec<String>,
}

/// Shared body of `evaluate` and `compare`.
fn score(mut s: Settings, min_models: usize) -> Result<Scored, CliError> {
    let paths = s.list("checkpoints");
    if paths.len() < min_models {
        return Err(usage(format!(
            "`checkpoints` needs at least {min_models} path(s), got {}",
            paths.len()
        )));
    }
    let models = load_checkpoints(&paths)?;
    if min_models > 1 {
        check_consistent(&models)?;
    }
    // Unless given explicitly, evaluate on the data the first model was trained on.
    for k in DATA_KEYS {
        if let Some(v) = models[0].ckpt.fields.get(&format!("cfg.{}", k.name)) {
            s.inherit(k.name, v);
        }
    }
    let data = DataSpec::from_settings(&s)?;
    for m in &models {
        if (m.model.height, m.model.width) != (data.height, data.width) {
            return Err(anyhow!(
                "{} was trained at {}x{} but the evaluation data is {}x{}",
                m.path.display(),
                m.model.height,
                m.model.width,
                data.height,
                data.width
            )
            .into());
        }
    }
    let split: Split = s.parse("split")?;
    let policy = match s.get("empty_class") {
        "one" => EmptyClass::One,
        "exclude" => EmptyClass::Exclude,
        other => {
            return Err(usage(format!(
                "invalid value `{other}` for `empty_class`: expected one or exclude"
            )))
        }
    };
    let baseline = match s.get("baseline") {
        "" => models
            .iter()
            .find(|m| m.name == Topology::Unet.display_name())
            .unwrap_or(&models[0])
            .name
            .clone(),
        b if models.iter().any(|m| m.name == b) => b.to_string(),
        b => {
            let names: Vec<_> = models.iter().map(|m| m.name.as_str()).collect();
            return Err(usage(format!("baseline `{b}` is not one of: {}", names.join(", "))));
        }
    };
    s.inherit("baseline", &baseline);
    let samples = data.load(split)?;
    if samples.is_empty() {
        return Err(anyhow!("the {split} split is empty").into());
    }
    let mut k: usize = s.parse("best_k")?;
    if k == 0 {
        return Err(usage("`best_k` must be at least 1"));
    }
    if k > samples.len() {
        log::warn!("best_k {k} exceeds the {} evaluation images; using {}", samples.len(), samples.len());
        k = samples.len();
    }
    let ids: Vec<String> = samples.iter().map(|x| x.id.clone()).collect();
    let targets: Vec<_> = samples.iter().map(|x| x.mask.clone()).collect();
    let mut predictions = Vec::with_capacity(models.len());
    for m in &models {
        let masks = samples
            .iter()
            .map(|x| m.model.generator.predict(&x.image).map(|l| binarize(&l)))
            .collect::<segattn::Result<Vec<_>>>()
            .with_context(|| format!("running {}", m.path.display()))?;
        predictions.push(ModelPredictions {
            model: m.name.clone(),
            masks,
        });
    }
    let report = evaluate_and_rank(&predictions, &ids, &targets, k, &baseline, policy)?;
    let masks = predictions.into_iter().map(|p| p.masks).collect();
    Ok(Scored {
        settings: s,
        report,
        models,
        masks,
        ids,
    })
}

fn print_table(report: &MetricsReport, scope: Scope) {
    println!(
        "{:<24} {:>8} {:>8} {:>8} {:>8}",
        "model", "PA", "dPA", "mIoU", "dmIoU"
    );
    for m in &report.models {
        let sm = match scope {
            Scope::All => &m.all,
            Scope::BestK => &m.best,
        };
        let (dpa, dmiou) = report.delta(&m.model, scope).unwrap_or((0.0, 0.0));
        println!(
            "{:<24} {:>8.4} {:>+8.4} {:>8.4} {:>+8.4}",
            m.model, sm.pa, dpa, sm.miou, dmiou
        );
    }
}

fn write_reports(out: &Path, header: &[String], report: &MetricsReport, table_scope: Scope) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("report.csv"), &report.to_csv(header))?;
    write_file(&out.join("table.csv"), &report.table_csv(table_scope, header))?;
    write_file(&out.join("table_best.csv"), &report.table_csv(Scope::BestK, header))?;
    Ok(())
}

pub fn evaluate(s: Settings) -> Result<(), CliError> {
    let dump = s.bool("dump")?;
    let Scored {
        settings: s,
        report,
        models,
        masks,
        ids,
    } = score(s, 1)?;
    let out = PathBuf::from(s.get("out"));
    write_reports(&out, &s.echo(), &report, Scope::All)?;
    if dump {
        for (m, model_masks) in models.iter().zip(&masks) {
            let dir = out.join("pred").join(slug(&m.name));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for (id, mask) in ids.iter().zip(model_masks) {
                write_pgm(&dir.join(format!("{id}.pgm")), mask)?;
            }
        }
    }
    print_table(&report, Scope::All);
    Ok(())
}

pub fn compare(s: Settings) -> Result<(), CliError> {
    let scope = match s.get("scope") {
        "all" => Scope::All,
        "best" => Scope::BestK,
        other => return Err(usage(format!("invalid value `{other}` for `scope`: expected all or best"))),
    };
    let scored = score(s, 2)?;
    let s = &scored.settings;
    write_reports(Path::new(s.get("out")), &s.echo(), &scored.report, scope)?;
    print_table(&scored.report, scope);
    Ok(())
}

pub fn gradcheck(s: Settings) -> Result<(), CliError> {
    let n: u64 = s.parse("seeds")?;
    if n == 0 {
        return Err(usage("`seeds` must be at least 1"));
    }
    let known = gradcheck::components();
    let filter = s.list("components");
    if let Some(bad) = filter.iter().find(|c| !known.contains(c)) {
        return Err(usage(format!("unknown component `{bad}`; valid: {}", known.join(", "))));
    }
    let seeds: Vec<u64> = (0..n).collect();
    let report = gradcheck::run_suite(&filter, &seeds)?;
    let mut text = String::new();
    for line in report.lines() {
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: {} components, max_rel_err={:.3e}, tolerance={:.0e}, {:.1}s",
        report.components.len(),
        report.max_rel_error(),
        gradcheck::TOLERANCE,
        report.elapsed.as_secs_f64()
    );
    if !s.get("out").is_empty() {
        write_file(Path::new(s.get("out")), &(comments(&s.echo()) + &text))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed").into())
    }
}

pub fn synth(s: Settings) -> Result<(), CliError> {
    let style: SyntheticStyle = s.parse("style")?;
    let (h, w) = parse_size(s.get("size"))?;
    let train: usize = s.parse("train_count")?;
    let test: usize = s.parse("test_count")?;
    let mut all = generate_synthetic(train + test, h, w, s.parse("data_seed")?, style)?;
    let test_set = all.split_off(train);
    let manifest = write_dataset(Path::new(s.get("out")), &all, &test_set)?;
    println!("{}", manifest.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert_eq!(default_name(Topology::Unet, None), "U-net");
        assert_eq!(default_name(Topology::Unet, Some(DiscriminatorDesign::D4V)), "GAN + D-4V");
        assert_eq!(
            default_name(Topology::FullAttentionUnet, Some(DiscriminatorDesign::D4V)),
            "Full attn. U-net + D-4V"
        );
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("GAN + D-4V"), "gan_d_4v");
        assert_eq!(slug("Adv. attn. U-net"), "adv_attn_u_net");
    }

    #[test]
    fn loss_csv_format() {
        let recs = [LossRecord {
            epoch: 0,
            generator_loss: 0.5,
            discriminator_loss: Some(0.25),
            segmentation_bce: 0.5,
            adversarial_bce: None,
        }];
        let csv = loss_csv(&["a=1".into()], &recs);
        assert_eq!(
            csv,
            "# a=1\nepoch,generator_loss,discriminator_loss,segmentation_bce,adversarial_bce\n1,0.50000000,0.25000000,0.50000000,\n"
        );
    }
}
