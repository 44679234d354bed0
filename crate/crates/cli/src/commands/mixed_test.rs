//! `mixed-test`: accuracy on an equal mix of clean, adversarial, and
//! corrupted examples.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pdalab_core::attacks::{attack_dataset, AttackFamily, AttackSpec, NormKind, PgdAttack};
use pdalab_core::corruptions::{load_suite_dataset, load_suite_manifest};
use pdalab_core::data::Dataset;
use pdalab_core::metrics::mixed_test;
use pdalab_core::rng::Rng;

use crate::args::{ArgMap, Flag};
use crate::commands::{load_data, load_model, resolve_kinds, CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "mixed-test",
    about: "evaluate on clean + PGD-adversarial + corrupted examples in equal proportion",
    flags: &[
        Flag { name: "model", metavar: "ckpt", required: true, default: None, help: "model checkpoint" },
        Flag { name: "data", metavar: "dataset", required: true, default: None, help: "clean test set" },
        Flag { name: "suite", metavar: "dir", required: true, default: None, help: "corruption suite for the corrupted component" },
        Flag { name: "kinds", metavar: "list", required: false, default: Some("all"), help: "corruption kinds or groups for the mix" },
        Flag { name: "eps", metavar: "n/255", required: false, default: Some("4"), help: "PGD budget in 1/255 units" },
        Flag { name: "alpha", metavar: "n/255", required: false, default: Some("1"), help: "PGD step size in 1/255 units" },
        Flag { name: "steps", metavar: "K", required: false, default: Some("20"), help: "PGD steps" },
        Flag { name: "seed", metavar: "S", required: false, default: Some("0"), help: "shuffle and attack seed" },
        Flag { name: "out", metavar: "report.csv", required: true, default: None, help: "output report" },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let model = load_model(args.get("model"))?;
    let clean = load_data(args.get("data"))?;
    let suite_dir = Path::new(args.get("suite"));
    let manifest = load_suite_manifest(suite_dir).map_err(CmdError::runtime)?;
    let kinds = resolve_kinds(args.get("kinds"))?;
    let seed = args.get_u64("seed").map_err(CmdError::Usage)?;
    let eps = args.get_f64("eps").map_err(CmdError::Usage)? / 255.0;
    let alpha = args.get_f64("alpha").map_err(CmdError::Usage)? / 255.0;
    let steps = args.get_usize("steps").map_err(CmdError::Usage)?;

    // adversarial component: white-box PGD on the evaluated model
    let spec = AttackSpec {
        family: AttackFamily::Pgd,
        norm: NormKind::LInf,
        eps,
        alpha,
        steps,
        c: 0.0,
        random_init: true,
        seed,
    };
    spec.validate().map_err(CmdError::runtime)?;
    let attack = PgdAttack {
        norm: spec.norm,
        eps: spec.eps,
        alpha: spec.alpha,
        steps: spec.steps,
        random_init: spec.random_init,
    };
    let adversarial =
        attack_dataset(&attack, &model, &clean, 128, seed).map_err(CmdError::runtime)?;

    // corrupted component: seeded sample from the selected suite kinds
    let corrupted = sample_corrupted(suite_dir, &manifest, &kinds, clean.len(), seed)?;

    let accuracy =
        mixed_test(&model, &clean, &adversarial, &corrupted, seed).map_err(CmdError::runtime)?;

    let mut w = BufWriter::new(File::create(args.get("out")).map_err(CmdError::runtime)?);
    writeln!(w, "n_per_component,kinds,eps,steps,accuracy").map_err(CmdError::runtime)?;
    writeln!(
        w,
        "{},{},{:.6},{},{:.6}",
        clean.len().min(adversarial.len()).min(corrupted.len()),
        kinds.join("+"),
        eps,
        steps,
        accuracy
    )
    .map_err(CmdError::runtime)?;
    w.flush().map_err(CmdError::runtime)?;

    println!(
        "mixed accuracy over clean+adv+corrupted ({}): {:.4}",
        kinds.join("+"),
        accuracy
    );
    Ok(())
}

/// Draw `n` corrupted examples uniformly from the selected kinds and
/// severities, deterministically in `seed`.
fn sample_corrupted(
    suite_dir: &Path,
    manifest: &pdalab_core::corruptions::SuiteManifest,
    kinds: &[&str],
    n: usize,
    seed: u64,
) -> Result<Dataset, CmdError> {
    let mut parts = Vec::new();
    for entry in &manifest.entries {
        if kinds.contains(&entry.kind.as_str()) {
            parts.push(
                load_suite_dataset(suite_dir, &entry.kind, entry.severity)
                    .map_err(CmdError::runtime)?,
            );
        }
    }
    if parts.is_empty() {
        return Err(CmdError::usage(
            "suite holds none of the requested corruption kinds",
        ));
    }
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut order: Vec<(usize, usize)> = Vec::with_capacity(total);
    for (pi, part) in parts.iter().enumerate() {
        for i in 0..part.len() {
            order.push((pi, i));
        }
    }
    let mut rng = Rng::from_label(seed, "mixed-corrupted-sample");
    rng.shuffle(&mut order);
    order.truncate(n.min(total));

    let stride = parts[0].features_per_example();
    let mut images = Vec::with_capacity(order.len() * stride);
    let mut labels = Vec::with_capacity(order.len());
    for &(pi, i) in &order {
        images.extend_from_slice(&parts[pi].images.data()[i * stride..(i + 1) * stride]);
        labels.push(parts[pi].labels[i]);
    }
    let mut shape = parts[0].images.shape().to_vec();
    shape[0] = order.len();
    Dataset::new(
        pdalab_tensor::Tensor::new(shape, images).map_err(CmdError::runtime)?,
        labels,
        parts[0].num_classes,
        "mixed-corrupted",
        "suite-sample",
    )
    .map_err(CmdError::runtime)
}
