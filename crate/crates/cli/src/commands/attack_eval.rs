//! `attack-eval`: measure a checkpoint's accuracy under one attack.

use std::fs::File;
use std::io::{BufWriter, Write};

use pdalab_core::attacks::{attack_dataset, build_attack, AttackFamily, AttackSpec, NormKind};
use pdalab_core::config::eps_units;
use pdalab_core::metrics::evaluate_error;

use crate::args::{ArgMap, Flag};
use crate::commands::{load_data, load_model, CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "attack-eval",
    about: "evaluate a model under fgsm, pgd, or the margin-loss L2 attack",
    flags: &[
        Flag { name: "model", metavar: "ckpt", required: true, default: None, help: "checkpoint directory" },
        Flag { name: "data", metavar: "dataset", required: true, default: None, help: "evaluation data (spec string or .bin)" },
        Flag { name: "attack", metavar: "fgsm|pgd|cw", required: true, default: None, help: "attack family" },
        Flag { name: "eps", metavar: "n/255", required: false, default: Some("8"), help: "budget in 1/255 pixel units" },
        Flag { name: "steps", metavar: "K", required: false, default: Some("20"), help: "iteration count (pgd, cw)" },
        Flag { name: "alpha", metavar: "n/255", required: false, default: Some("1"), help: "step size in 1/255 units; descent rate for cw" },
        Flag { name: "c", metavar: "float", required: false, default: Some("500"), help: "margin weight of the cw objective" },
        Flag { name: "norm", metavar: "linf|l2", required: false, default: Some("linf"), help: "pgd projection norm" },
        Flag { name: "random-init", metavar: "on|off", required: false, default: Some("on"), help: "pgd random start inside the ball" },
        Flag { name: "batch", metavar: "N", required: false, default: Some("128"), help: "attack batch size" },
        Flag { name: "seed", metavar: "S", required: false, default: Some("0"), help: "attack seed" },
        Flag { name: "out", metavar: "report.csv", required: true, default: None, help: "output report" },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let family = AttackFamily::parse(args.get("attack")).map_err(CmdError::usage)?;
    let norm = NormKind::parse(args.get("norm")).map_err(CmdError::usage)?;
    let spec = AttackSpec {
        family,
        norm,
        eps: args.get_f64("eps").map_err(CmdError::Usage)? / 255.0,
        alpha: eps_units(args.get_f64("alpha").map_err(CmdError::Usage)?),
        steps: args.get_usize("steps").map_err(CmdError::Usage)?,
        c: args.get_f64("c").map_err(CmdError::Usage)?,
        random_init: args.get_switch("random-init").map_err(CmdError::Usage)?,
        seed: args.get_u64("seed").map_err(CmdError::Usage)?,
    };
    let model = load_model(args.get("model"))?;
    let data = load_data(args.get("data"))?;
    let attack = build_attack(&spec).map_err(CmdError::runtime)?;

    let clean_err = evaluate_error(&model, &data).map_err(CmdError::runtime)?;
    let batch = args.get_usize("batch").map_err(CmdError::Usage)?;
    let adv = attack_dataset(attack.as_ref(), &model, &data, batch, spec.seed)
        .map_err(CmdError::runtime)?;
    let adv_err = evaluate_error(&model, &adv).map_err(CmdError::runtime)?;

    let mut w = BufWriter::new(File::create(args.get("out")).map_err(CmdError::runtime)?);
    writeln!(w, "attack,norm,eps,alpha,steps,c,seed,n,clean_acc,attacked_acc").map_err(CmdError::runtime)?;
    writeln!(
        w,
        "{},{},{:.6},{:.6},{},{:.6},{},{},{:.6},{:.6}",
        attack.name(),
        spec.norm.name(),
        spec.eps,
        spec.alpha,
        spec.steps,
        spec.c,
        spec.seed,
        data.len(),
        1.0 - clean_err,
        1.0 - adv_err
    )
    .map_err(CmdError::runtime)?;
    w.flush().map_err(CmdError::runtime)?;

    println!(
        "{} on {} examples: clean_acc={:.4} attacked_acc={:.4}",
        attack.name(),
        data.len(),
        1.0 - clean_err,
        1.0 - adv_err
    );
    Ok(())
}
