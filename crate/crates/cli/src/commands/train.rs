//! `train`: fit a model with a strategy described by a plan file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pdalab_core::config::{parse_kv_file, parse_train_plan};
use pdalab_core::nn::{build_model, save_checkpoint, Arch};
use pdalab_core::train::build_strategy;

use crate::args::{ArgMap, Flag};
use crate::commands::{load_data, CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "train",
    about: "train a model (natural, gda, pgd_at, or pda) and write a checkpoint",
    flags: &[
        Flag {
            name: "plan",
            metavar: "plan.cfg",
            required: true,
            default: None,
            help: "key=value plan file (strategy, epochs, eps, lambda, k, sigma, alpha, steps, lr, momentum, batch, seed)",
        },
        Flag {
            name: "data",
            metavar: "dataset",
            required: true,
            default: None,
            help: "training data: shapes:…, blobs:…, idx:imgs,labels, or a .bin file",
        },
        Flag {
            name: "arch",
            metavar: "mlp|cnn",
            required: false,
            default: Some("mlp"),
            help: "model architecture",
        },
        Flag {
            name: "out",
            metavar: "dir",
            required: true,
            default: None,
            help: "checkpoint directory (also receives history.csv)",
        },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let plan_entries = parse_kv_file(args.get("plan")).map_err(CmdError::runtime)?;
    let plan = parse_train_plan(&plan_entries).map_err(CmdError::runtime)?;
    let arch = Arch::parse(args.get("arch")).map_err(CmdError::usage)?;
    let data = load_data(args.get("data"))?;
    let input_shape = data.example_shape();

    let mut model =
        build_model(arch, &input_shape, data.num_classes, plan.seed).map_err(CmdError::runtime)?;
    let strategy = build_strategy(plan.strategy.name()).map_err(CmdError::runtime)?;
    let history = strategy
        .run(&mut model, &data, &plan)
        .map_err(CmdError::runtime)?;

    let out = Path::new(args.get("out"));
    save_checkpoint(&model, out, plan.epochs).map_err(CmdError::runtime)?;
    let mut w = BufWriter::new(File::create(out.join("history.csv")).map_err(CmdError::runtime)?);
    history.write_csv(&mut w).map_err(CmdError::runtime)?;
    w.flush().map_err(CmdError::runtime)?;

    if let Some(last) = history.epochs.last() {
        println!(
            "trained {} [{}] for {} epochs: clean_acc={:.4} clean_loss={:.4} ({:.0} ms/epoch)",
            plan.strategy.name(),
            arch.name(),
            plan.epochs,
            last.clean_acc,
            last.clean_loss,
            history.mean_epoch_wall_ms()
        );
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}
