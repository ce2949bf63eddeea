use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ensure_fresh, load_split, read_config, train_into, write_atomic, write_json, REPORT_FILE};
use crate::error::{Error, Result};
use crate::metrics::{tradeoff_select, FairnessReport, MatchMode, Selection};
use crate::trainer::{Method, TrainConfig};

pub const SWEEP_SPEC_VERSION: u32 = 1;
const SPEC_FILE: &str = "sweep.json";

/// Hyper-parameter grid over attribute-predictor learning rate and `λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub version: u32,
    pub methods: Vec<Method>,
    /// Attribute-predictor learning rates.
    pub eta3: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Utility tolerance in f1 points.
    pub delta: f64,
    #[serde(default = "default_select_mode")]
    pub select_mode: MatchMode,
    /// Evaluated ERM run supplying the baseline utility. Without it every
    /// seed gets its own ERM run.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    pub base: TrainConfig,
}

fn default_select_mode() -> MatchMode {
    MatchMode::COnP
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sweep spec: {m}")));
        if self.version != SWEEP_SPEC_VERSION {
            return bad(&format!("version {}, expected {SWEEP_SPEC_VERSION}", self.version));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return bad("methods and seeds must be non-empty");
        }
        if self.methods.iter().any(|m| m.is_adversarial()) && (self.eta3.is_empty() || self.lambdas.is_empty()) {
            return bad("eta3 and lambda grids must be non-empty");
        }
        if self.eta3.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.lambdas.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("grid values must be finite; eta3 > 0, lambda >= 0");
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad("delta must be >= 0");
        }
        self.base.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedRun {
    pub id: String,
    pub method: Method,
    pub seed: u64,
    pub eta3: Option<f64>,
    pub lambda: Option<f64>,
    pub config: TrainConfig,
}

/// Every run of a sweep in a fixed order. ERM baselines come first when
/// the sweep config does not name an external baseline.
pub fn plan_runs(spec: &SweepSpec) -> Vec<PlannedRun> {
    let mut out = Vec::new();
    for &seed in &spec.seeds {
        let with = |method: Method, eta3: Option<f64>, lambda: Option<f64>| {
            let mut config = TrainConfig {
                method,
                seed,
                ..spec.base.clone()
            };
            if let Some(e) = eta3 {
                config.lr_attr = e;
            }
            if let Some(l) = lambda {
                config.lambda = l;
            }
            let id = match (eta3, lambda) {
                (Some(e), Some(l)) => format!("{}-eta{e}-lam{l}-s{seed}", method.as_str()),
                _ => format!("{}-s{seed}", method.as_str()),
            };
            PlannedRun {
                id,
                method,
                seed,
                eta3,
                lambda,
                config,
            }
        };
        if spec.baseline.is_none() || spec.methods.contains(&Method::Erm) {
            out.push(with(Method::Erm, None, None));
        }
        for &m in &spec.methods {
            if m.is_adversarial() {
                for &e in &spec.eta3 {
                    for &l in &spec.lambdas {
                        out.push(with(m, Some(e), Some(l)));
                    }
                }
            } else if m != Method::Erm {
                out.push(with(m, None, None));
            }
        }
    }
    out
}

/// Trains and evaluates every planned run not already complete under
/// `out`, at most `jobs` at a time, then writes the trade-off artifacts.
pub fn cmd_sweep(spec_path: &Path, corpus: &Path, out: &Path, delta: Option<f64>, jobs: usize) -> Result<()> {
    let spec: SweepSpec = read_config(spec_path)?;
    spec.validate()?;
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let spec_file = out.join(SPEC_FILE);
    if spec_file.exists() {
        let previous: SweepSpec = read_config(&spec_file)?;
        if previous != spec {
            return Err(Error::Config(format!(
                "{} holds a different sweep; use a fresh directory",
                out.display()
            )));
        }
        info!("resuming sweep in {}", out.display());
    } else {
        ensure_fresh(out)?;
        fs::create_dir_all(out)?;
        write_json(&spec_file, &spec)?;
    }

    let runs = plan_runs(&spec);
    let pending: Vec<&PlannedRun> = runs.iter().filter(|r| !out.join(&r.id).join(REPORT_FILE).exists()).collect();
    info!("{} of {} runs pending", pending.len(), runs.len());
    if !pending.is_empty() {
        let train = load_split(corpus, &spec.base, false)?;
        let test = load_split(corpus, &spec.base, true)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            pending.par_iter().for_each(|r| {
                let dir = out.join(&r.id);
                if dir.exists() {
                    // a directory without a report is left over from an interrupted run
                    if let Err(e) = fs::remove_dir_all(&dir) {
                        error!("{}: {e}", r.id);
                        return;
                    }
                }
                if let Err(e) = train_into(&r.config, &train, &dir, Some(&test)) {
                    error!("{} failed: {e}", r.id);
                }
            })
        });
    }
    cmd_report(out, delta, None)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub run: String,
    pub method: Method,
    pub seed: u64,
    pub eta3: Option<f64>,
    pub lambda: Option<f64>,
    /// `(U, F)` per mode; `None` for runs without a report.
    pub scores: Option<BTreeMap<String, (f64, Option<f64>)>>,
    pub qualified: Option<bool>,
    pub selected: bool,
}

#[derive(Clone, Debug, Serialize)]
struct SelectionRecord {
    method: Method,
    seed: u64,
    baseline_utility: f64,
    delta: f64,
    mode: MatchMode,
    selected: Option<String>,
}

fn scores_of(report: &FairnessReport) -> BTreeMap<String, (f64, Option<f64>)> {
    report
        .modes
        .iter()
        .map(|m| (m.mode.to_string(), (m.utility, m.fairness_gap)))
        .collect()
}

fn read_report(dir: &Path) -> Option<FairnessReport> {
    let text = fs::read_to_string(dir.join(REPORT_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Rebuilds `tradeoff.csv`, `tradeoff.svg` and `selection.json` from the
/// run reports under a sweep directory. Runs without a report are listed
/// as missing.
pub fn cmd_report(out: &Path, delta: Option<f64>, mode: Option<MatchMode>) -> Result<()> {
    let spec: SweepSpec = read_config(&out.join(SPEC_FILE))?;
    spec.validate()?;
    let delta = delta.unwrap_or(spec.delta);
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Config("delta must be >= 0".into()));
    }
    let mode = mode.unwrap_or(spec.select_mode);
    let key = mode.to_string();
    let external = match &spec.baseline {
        Some(p) => {
            let r = read_report(p).ok_or_else(|| Error::Config(format!("baseline {} has no readable report", p.display())))?;
            let u = r
                .mode(mode)
                .ok_or_else(|| Error::Config(format!("baseline report lacks {mode}")))?
                .utility;
            Some(u)
        }
        None => None,
    };

    let runs = plan_runs(&spec);
    let mut rows: Vec<TradeoffRow> = runs
        .iter()
        .map(|r| TradeoffRow {
            run: r.id.clone(),
            method: r.method,
            seed: r.seed,
            eta3: r.eta3,
            lambda: r.lambda,
            scores: read_report(&out.join(&r.id)).map(|rep| scores_of(&rep)),
            qualified: None,
            selected: false,
        })
        .collect();

    let mut selections = Vec::new();
    for &seed in &spec.seeds {
        let u0 = external.or_else(|| {
            rows.iter()
                .find(|r| r.seed == seed && r.method == Method::Erm)
                .and_then(|r| r.scores.as_ref())
                .and_then(|s| s.get(&key))
                .map(|s| s.0)
        });
        let Some(u0) = u0 else {
            error!("seed {seed}: baseline run missing, no selection");
            continue;
        };
        for row in rows.iter_mut().filter(|r| r.seed == seed) {
            if let Some(s) = row.scores.as_ref().and_then(|s| s.get(&key)) {
                row.qualified = Some(s.0 > u0 - delta);
            }
        }
        let mut methods: Vec<Method> = spec.methods.iter().copied().filter(|m| *m != Method::Erm).collect();
        methods.dedup();
        for method in methods {
            let idx: Vec<usize> = (0..rows.len())
                .filter(|&i| rows[i].seed == seed && rows[i].method == method)
                .filter(|&i| matches!(rows[i].scores.as_ref().and_then(|s| s.get(&key)), Some((_, Some(_)))))
                .collect();
            let mut selected = None;
            if !idx.is_empty() {
                let cand: Vec<(f64, f64)> = idx
                    .iter()
                    .map(|&i| {
                        let (u, f) = rows[i].scores.as_ref().and_then(|s| s.get(&key)).copied().expect("filtered");
                        (u, f.expect("filtered"))
                    })
                    .collect();
                if let Selection::Selected(k) = tradeoff_select(&cand, u0, delta)? {
                    rows[idx[k]].selected = true;
                    selected = Some(rows[idx[k]].run.clone());
                }
            }
            selections.push(SelectionRecord {
                method,
                seed,
                baseline_utility: u0,
                delta,
                mode,
                selected,
            });
        }
    }

    write_atomic(&out.join("tradeoff.csv"), tradeoff_csv(&rows).as_bytes())?;
    write_atomic(&out.join("tradeoff.svg"), tradeoff_svg(&rows, &key).as_bytes())?;
    let mut bytes = serde_json::to_vec_pretty(&selections)?;
    bytes.push(b'\n');
    write_atomic(&out.join("selection.json"), &bytes)?;
    let missing = rows.iter().filter(|r| r.scores.is_none()).count();
    info!("{} runs reported, {missing} missing", rows.len() - missing);
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut s = String::from("run,method,seed,eta3,lambda,U_COnPOff,F_COnPOff,U_COnP,F_COnP,qualified,selected,status\n");
    for r in rows {
        let get = |m: MatchMode| r.scores.as_ref().and_then(|s| s.get(&m.to_string())).copied();
        let (upo, fpo) = get(MatchMode::COnPOff).map(|(u, f)| (Some(u), f)).unwrap_or((None, None));
        let (up, fp) = get(MatchMode::COnP).map(|(u, f)| (Some(u), f)).unwrap_or((None, None));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            r.method.as_str(),
            r.seed,
            opt(r.eta3),
            opt(r.lambda),
            opt(upo),
            opt(fpo),
            opt(up),
            opt(fp),
            opt(r.qualified),
            r.selected,
            if r.scores.is_some() { "ok" } else { "missing" }
        );
    }
    s
}

const COLORS: [&str; 5] = ["#444444", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn color(m: Method) -> &'static str {
    match m {
        Method::Erm => COLORS[0],
        Method::Al => COLORS[1],
        Method::NcalV1 => COLORS[2],
        Method::NcalV2 => COLORS[3],
        Method::Dind => COLORS[4],
    }
}

/// Static scatter of `(U, F)` per completed run for one metric.
pub fn tradeoff_svg(rows: &[TradeoffRow], key: &str) -> String {
    let (w, h, pad) = (640.0, 480.0, 60.0);
    let pts: Vec<(&TradeoffRow, f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let (u, f) = r.scores.as_ref()?.get(key).copied()?;
            Some((r, u, f?))
        })
        .collect();
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo.is_finite() {
            let m = ((hi - lo) * 0.1).max(1.0);
            (lo - m, hi + m)
        } else {
            (0.0, 100.0)
        }
    };
    let (ulo, uhi) = span(&mut pts.iter().map(|p| p.1));
    let (flo, fhi) = span(&mut pts.iter().map(|p| p.2).chain([0.0]));
    let x = |u: f64| pad + (u - ulo) / (uhi - ulo) * (w - 2.0 * pad);
    let y = |f: f64| h - pad - (f - flo) / (fhi - flo) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        y(0.0),
        w - pad
    );
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for i in 0..=4 {
        let u = ulo + (uhi - ulo) * i as f64 / 4.0;
        let f = flo + (fhi - flo) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{u:.1}</text>"#, x(u), h - pad + 18.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{f:.1}</text>"#, pad - 6.0, y(f) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">U ({key}, f1 points)</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">F ({key}, M minus F)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (r, u, f) in &pts {
        let stroke = if r.selected { r#" stroke="black" stroke-width="2""# } else { "" };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="5" fill="{}"{stroke}><title>{}</title></circle>"#,
            x(*u),
            y(*f),
            color(r.method),
            r.run
        );
    }
    let mut seen = Vec::new();
    for (r, _, _) in &pts {
        if !seen.contains(&r.method) {
            seen.push(r.method);
        }
    }
    for (i, m) in seen.iter().enumerate() {
        let ly = pad + 16.0 * i as f64 + 10.0;
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{ly:.1}" r="4" fill="{}"/>"#, w - pad - 80.0, color(*m));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, w - pad - 70.0, ly + 4.0, m.as_str());
    }
    s.push_str("</svg>\n");
    s
}
