//! `run` and `report`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use longrun::harness::{noise_sweep, replicate, write_curves_csv, write_sweep_csv, ReplicationResult, RunLog};

use crate::config::{header_line, StudyConfig};
use crate::{runtime, Failure};

fn create(path: &Path) -> Result<fs::File, Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_with_header(path: &Path, header: &str, body: &[u8]) -> Result<(), Failure> {
    let mut f = create(path)?;
    writeln!(f, "{header}").map_err(runtime)?;
    f.write_all(body).map_err(runtime)?;
    Ok(())
}

fn run_log_path(out: &Path, design: &str, seed: u64) -> PathBuf {
    out.join("runs").join(design).join(format!("seed-{seed}.jsonl"))
}

fn curves_bytes(results: &[ReplicationResult]) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write_curves_csv(results, &mut buf)?;
    Ok(buf)
}

fn print_finals(results: &[ReplicationResult]) {
    for r in results {
        match r.final_point() {
            Some(p) => println!("{:<20} {:>12.6} ± {:.6}  (n={})", r.design, p.mean, 2.0 * p.sem, p.n),
            None => println!("{:<20} no successful runs", r.design),
        }
    }
}

pub fn run(cfg: &StudyConfig, out: &Path) -> Result<(), Failure> {
    let problem = cfg.build_problem()?;
    let header = cfg.header();
    let results = replicate(&problem, &cfg.designs, &cfg.schedule, cfg.n_reps, cfg.seed)?;
    for r in &results {
        for (seed, log) in r.seeds.iter().zip(&r.logs) {
            write_with_header(&run_log_path(out, &r.design, *seed), &header, log.to_jsonl()?.as_bytes())?;
        }
    }
    write_with_header(&out.join("curves.csv"), &header, &curves_bytes(&results)?)?;
    if !cfg.noise_sweep.is_empty() {
        let rows = noise_sweep(&cfg.problem, &cfg.noise_sweep, &cfg.designs, &cfg.schedule, cfg.n_reps, cfg.seed)?;
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf)?;
        write_with_header(&out.join("noise_sweep.csv"), &header, &buf)?;
    }
    print_finals(&results);

    let failures: Vec<String> = results
        .iter()
        .flat_map(|r| r.failures.iter().map(move |(s, e)| format!("{} seed {s}: {e}", r.design)))
        .collect();
    if failures.is_empty() {
        return Ok(());
    }
    // Outputs above cover the successful runs only.
    let mut body = failures.join("\n");
    body.push('\n');
    write_with_header(&out.join("FAILED"), &header, body.as_bytes())?;
    Err(Failure::Runtime(format!(
        "{} run(s) failed; partial results in {} (see FAILED)",
        failures.len(),
        out.display()
    )))
}

fn jsonl_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    for e in entries {
        let p = e.map_err(runtime)?.path();
        if p.is_dir() {
            jsonl_files(&p, found)?;
        } else if p.extension().is_some_and(|x| x == "jsonl") {
            found.push(p);
        }
    }
    Ok(())
}

/// `(config hash, root seed)` from a file's header line.
fn header_fields(path: &Path) -> Option<(String, u64)> {
    let f = fs::File::open(path).ok()?;
    let line = std::io::BufReader::new(f).lines().next()?.ok()?;
    let rest = line.strip_prefix("# longrun ")?;
    let mut hash = None;
    let mut seed = None;
    for field in rest.split_whitespace() {
        if let Some(h) = field.strip_prefix("config=") {
            hash = Some(h.to_string());
        } else if let Some(s) = field.strip_prefix("seed=") {
            seed = s.parse().ok();
        }
    }
    Some((hash?, seed?))
}

pub fn report(runs: &Path, out: &Path) -> Result<(), Failure> {
    let mut files = Vec::new();
    jsonl_files(runs, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Failure::Config(format!("no run logs under {}", runs.display())));
    }
    let mut by_design: BTreeMap<String, Vec<(u64, RunLog)>> = BTreeMap::new();
    let mut headers = Vec::new();
    for f in &files {
        let log = RunLog::read_jsonl(f).map_err(|e| Failure::Config(format!("{}: {e}", f.display())))?;
        let Some(first) = log.records.first() else {
            return Err(Failure::Config(format!("{}: empty run log", f.display())));
        };
        by_design.entry(first.design.clone()).or_default().push((first.seed, log));
        headers.push(header_fields(f));
    }
    let (hash, seed) = match headers.first().cloned().flatten() {
        Some(h) if headers.iter().all(|x| x.as_ref() == Some(&h)) => h,
        _ => ("mixed".to_string(), 0),
    };
    let mut results = Vec::new();
    for (design, mut runs) in by_design {
        runs.sort_by_key(|(s, _)| *s);
        let (seeds, logs) = runs.into_iter().unzip();
        results.push(ReplicationResult::from_logs(design, seeds, logs)?);
    }
    write_with_header(&out.join("curves.csv"), &header_line(&hash, seed), &curves_bytes(&results)?)?;
    print_finals(&results);
    Ok(())
}
