//! `report`: summarize the recognizable artifacts under a directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::args::{ArgMap, Flag};
use crate::commands::{CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "report",
    about: "aggregate history, attack, corruption, and mixed-test artifacts into one summary",
    flags: &[
        Flag { name: "dir", metavar: "dir", required: true, default: None, help: "directory to scan (recursive)" },
        Flag { name: "out", metavar: "summary.csv", required: false, default: None, help: "also write the summary as CSV" },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let root = Path::new(args.get("dir"));
    let mut files = Vec::new();
    collect_csv(root, &mut files).map_err(CmdError::runtime)?;
    files.sort();

    let mut rows: Vec<(String, String, String)> = Vec::new();
    for path in &files {
        let Ok(text) = fs::read_to_string(path) else { continue };
        let rel = path.strip_prefix(root).unwrap_or(path).display().to_string();
        summarize(&rel, &text, &mut rows);
    }

    let mut text = String::new();
    if rows.is_empty() {
        text.push_str(&format!("no recognizable artifacts under {}\n", root.display()));
    }
    let mut csv = String::from("artifact,metric,value\n");
    for (artifact, metric, value) in &rows {
        text.push_str(&format!("{artifact}: {metric} = {value}\n"));
        csv.push_str(&format!("{artifact},{metric},{value}\n"));
    }
    if let Some(out) = args.get_opt("out") {
        fs::write(out, csv).map_err(CmdError::runtime)?;
        text.push_str(&format!("summary written to {out}\n"));
    }
    // tolerate a closed pipe (e.g. piping into head)
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

fn collect_csv(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_csv(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    Ok(())
}

fn summarize(name: &str, text: &str, rows: &mut Vec<(String, String, String)>) {
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return };
    match header {
        "epoch,eps_t,clean_loss,clean_acc,wall_ms" => {
            if let Some(last) = text.lines().filter(|l| !l.starts_with("epoch")).next_back() {
                let fields: Vec<&str> = last.split(',').collect();
                if fields.len() == 5 {
                    rows.push((name.into(), "final_clean_acc".into(), fields[3].into()));
                    rows.push((name.into(), "final_clean_loss".into(), fields[2].into()));
                    rows.push((name.into(), "epochs".into(), format!("{}", text.lines().count() - 1)));
                }
            }
        }
        "attack,norm,eps,alpha,steps,c,seed,n,clean_acc,attacked_acc" => {
            if let Some(row) = lines.next() {
                let fields: Vec<&str> = row.split(',').collect();
                if fields.len() == 10 {
                    let tag = format!("{}@eps={}", fields[0], fields[2]);
                    rows.push((name.into(), format!("{tag}:clean_acc"), fields[8].into()));
                    rows.push((name.into(), format!("{tag}:attacked_acc"), fields[9].into()));
                }
            }
        }
        "corruption,severity,err_model,err_base,CE,RmCE" => {
            for line in lines {
                if let Some(rest) = line.strip_prefix("mCE,,,,") {
                    rows.push((name.into(), "mCE".into(), rest.trim_end_matches(',').into()));
                } else if let Some(rest) = line.strip_prefix("relative_mCE,,,,,") {
                    rows.push((name.into(), "relative_mCE".into(), rest.into()));
                } else if let Some(rest) = line.strip_prefix("clean_error,,") {
                    let parts: Vec<&str> = rest.split(',').collect();
                    if !parts.is_empty() {
                        rows.push((name.into(), "clean_error".into(), parts[0].into()));
                    }
                }
            }
        }
        "n_per_component,kinds,eps,steps,accuracy" => {
            if let Some(row) = lines.next() {
                let fields: Vec<&str> = row.split(',').collect();
                if fields.len() == 5 {
                    rows.push((name.into(), format!("mixed_acc[{}]", fields[1]), fields[4].into()));
                }
            }
        }
        "anchor,index,lhs,rhs,c_min,k_max,newton_term,holds,c_reliable" => {
            let mut held = 0usize;
            let mut reliable = 0usize;
            for line in lines {
                if line.starts_with('#') {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() == 9 && fields[8] == "true" {
                    reliable += 1;
                    if fields[7] == "true" {
                        held += 1;
                    }
                }
            }
            rows.push((
                name.into(),
                "perturbation_bound_held".into(),
                format!("{held}/{reliable}"),
            ));
        }
        _ => {}
    }
}
