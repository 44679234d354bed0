//! `theory-check`: empirical probes of the perturbation bound (per anchor)
//! and the generalization bound.

use std::fs::File;
use std::io::{BufWriter, Write};

use pdalab_core::analysis::{
    covering_number, estimate_loss_constants, generalization_bound, perturbation_bound_check,
    BoundProbe, GeneralizationBoundInputs, ESTIMATE_DISCLAIMER,
};
use pdalab_core::rng::Rng;
use pdalab_core::train::evaluate;

use crate::args::{ArgMap, Flag};
use crate::commands::{load_data, load_model, CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "theory-check",
    about: "empirical perturbation-bound anchors and the generalization bound",
    flags: &[
        Flag { name: "model", metavar: "ckpt", required: true, default: None, help: "model checkpoint" },
        Flag { name: "data", metavar: "dataset", required: true, default: None, help: "anchor/training data" },
        Flag { name: "anchors", metavar: "N", required: false, default: Some("50"), help: "random anchors for the perturbation bound" },
        Flag { name: "radius", metavar: "R", required: false, default: Some("1.0"), help: "logit-space search radius" },
        Flag { name: "slack", metavar: "e", required: false, default: Some("0.05"), help: "maximizer slack" },
        Flag { name: "samples", metavar: "N", required: false, default: Some("256"), help: "neighborhood samples for C and K" },
        Flag { name: "gamma", metavar: "g", required: false, default: Some("0.5"), help: "cover radius of the generalization bound" },
        Flag { name: "lambda", metavar: "l", required: false, default: Some("auto"), help: "penalty weight; auto picks 2·L1+1" },
        Flag { name: "p", metavar: "p", required: false, default: Some("0.05"), help: "confidence level in (0,1)" },
        Flag { name: "points", metavar: "N", required: false, default: Some("150"), help: "sampled points for constant estimation" },
        Flag { name: "seed", metavar: "S", required: false, default: Some("0"), help: "probe seed" },
        Flag { name: "out", metavar: "theory.csv", required: true, default: None, help: "output report" },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let model = load_model(args.get("model"))?;
    let data = load_data(args.get("data"))?;
    let seed = args.get_u64("seed").map_err(CmdError::Usage)?;
    let anchors = args.get_usize("anchors").map_err(CmdError::Usage)?;
    let probe = BoundProbe {
        radius: args.get_f64("radius").map_err(CmdError::Usage)?,
        slack: args.get_f64("slack").map_err(CmdError::Usage)?,
        samples: args.get_usize("samples").map_err(CmdError::Usage)?,
        seed,
        ..BoundProbe::default()
    };

    let mut w = BufWriter::new(File::create(args.get("out")).map_err(CmdError::runtime)?);
    writeln!(w, "anchor,index,lhs,rhs,c_min,k_max,newton_term,holds,c_reliable")
        .map_err(CmdError::runtime)?;

    let mut rng = Rng::from_label(seed, "theory-anchors");
    let mut held = 0usize;
    let mut reliable = 0usize;
    for a in 0..anchors {
        let idx = rng.below(data.len());
        let (x, y) = data.batch(idx, idx + 1);
        let report =
            perturbation_bound_check(&model, &x, y[0], &probe).map_err(CmdError::runtime)?;
        if report.c_reliable {
            reliable += 1;
            if report.holds {
                held += 1;
            }
        }
        writeln!(
            w,
            "{a},{idx},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            report.lhs,
            report.rhs,
            report.c_min,
            report.k_max,
            report.newton_term,
            report.holds,
            report.c_reliable
        )
        .map_err(CmdError::runtime)?;
    }

    // generalization bound over the same data
    let consts = estimate_loss_constants(&model, &data, args.get_usize("points").map_err(CmdError::Usage)?, seed)
        .map_err(CmdError::runtime)?;
    let lambda = match args.get("lambda") {
        "auto" => 2.0 * consts.l1 + 1.0,
        v => v
            .parse::<f64>()
            .map_err(|_| CmdError::usage(format!("flag --lambda expects a number or auto, got '{v}'")))?,
    };
    let gamma = args.get_f64("gamma").map_err(CmdError::Usage)?;
    let p = args.get_f64("p").map_err(CmdError::Usage)?;
    let (empirical_loss, _) = evaluate(&model, &data).map_err(CmdError::runtime)?;
    let covering = covering_number(&data.images, gamma / 2.0);
    let inputs = GeneralizationBoundInputs {
        empirical_loss,
        n: data.len(),
        covering,
        gamma,
        lambda,
        m0: consts.m0,
        m1: consts.m1,
        l0: consts.l0,
        l1: consts.l1,
        p,
    };
    let bound = generalization_bound(&inputs).map_err(CmdError::runtime)?;

    writeln!(
        w,
        "# constants ({ESTIMATE_DISCLAIMER}): m0={:.6} m1={:.6} l0={:.6} l1={:.6} pairs={}",
        consts.m0, consts.m1, consts.l0, consts.l1, consts.pairs
    )
    .map_err(CmdError::runtime)?;
    writeln!(
        w,
        "# generalization: empirical_loss={empirical_loss:.6} n={} covering={covering} gamma={gamma} lambda={lambda:.6} p={p} bound={bound:.6}",
        data.len()
    )
    .map_err(CmdError::runtime)?;
    w.flush().map_err(CmdError::runtime)?;

    println!(
        "perturbation bound held on {held}/{reliable} reliable anchors ({} total); \
         generalization bound = {bound:.4} (empirical loss {empirical_loss:.4}, \
         constants {ESTIMATE_DISCLAIMER})",
        anchors
    );
    Ok(())
}
