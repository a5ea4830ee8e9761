//! Pass/fail bands over reports. Rates are fractions; margins are in rate
//! units (0.15 is fifteen points).

use std::fmt;

use super::report::EvalReport;
use super::Diagnostics;

// Keeps exact-boundary comparisons from flipping on rounding.
const EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    /// Acceptance criterion number; `None` for protocol invariants.
    pub criterion: Option<u8>,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.criterion {
            Some(c) => format!("criterion {c}"),
            None => "invariant".to_string(),
        };
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} [{tag}] {}: {}", self.name, self.detail)
    }
}

fn band(criterion: Option<u8>, name: &str, pass: bool, detail: String) -> Band {
    Band { criterion, name: name.to_string(), pass, detail }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Looks up averages for `names`; a missing row fails the band.
fn averages<const N: usize>(r: &EvalReport, names: [&str; N]) -> Result<[f64; N], String> {
    let mut out = [0.0; N];
    for (o, n) in out.iter_mut().zip(names) {
        *o = r.average(n).ok_or_else(|| format!("report has no `{n}` row"))?;
    }
    Ok(out)
}

fn checked<const N: usize>(
    r: &EvalReport,
    criterion: Option<u8>,
    name: &str,
    names: [&str; N],
    f: impl FnOnce([f64; N]) -> (bool, String),
) -> Band {
    match averages(r, names) {
        Ok(v) => {
            let (pass, detail) = f(v);
            band(criterion, name, pass, detail)
        }
        Err(e) => band(criterion, name, false, e),
    }
}

pub fn check_eval(r: &EvalReport) -> Vec<Band> {
    let mut out = vec![checked(r, Some(4), "oracle average >= 90%", ["oracle"], |[o]| {
        (o >= 0.90 - EPS, format!("oracle {}", pct(o)))
    })];
    let learned: Vec<&str> =
        ["lorel", "lcbc", "lcrl", "goal-state"].into_iter().filter(|n| r.row(n).is_some()).collect();
    out.push(match r.average("oracle") {
        Some(o) => {
            let beaten: Vec<String> = learned
                .iter()
                .filter(|n| r.average(n).is_some_and(|v| v > o + EPS))
                .map(|n| n.to_string())
                .collect();
            let detail = if beaten.is_empty() {
                format!("oracle {} vs {} learned methods", pct(o), learned.len())
            } else {
                format!("oracle {} exceeded by {}", pct(o), beaten.join(", "))
            };
            band(Some(4), "oracle >= every learned method", beaten.is_empty() && !learned.is_empty(), detail)
        }
        None => band(Some(4), "oracle >= every learned method", false, "report has no `oracle` row".into()),
    });
    out.push(checked(r, Some(5), "lorel >= lcbc + 15", ["lorel", "lcbc"], |[l, b]| {
        (l - b >= 0.15 - EPS, format!("lorel {} lcbc {} margin {:+.1}", pct(l), pct(b), 100.0 * (l - b)))
    }));
    out.push(checked(r, Some(5), "lorel >= random + 30", ["lorel", "random"], |[l, x]| {
        (l - x >= 0.30 - EPS, format!("lorel {} random {} margin {:+.1}", pct(l), pct(x), 100.0 * (l - x)))
    }));
    out.push(checked(r, Some(5), "goal-state <= lorel - 15", ["lorel", "goal-state"], |[l, g]| {
        (l - g >= 0.15 - EPS, format!("lorel {} goal-state {} margin {:+.1}", pct(l), pct(g), 100.0 * (l - g)))
    }));
    out.push(checked(r, None, "oracle >= lorel >= lcbc >= random", ["oracle", "lorel", "lcbc", "random"], |v| {
        let ok = v.windows(2).all(|w| w[0] + EPS >= w[1]);
        (ok, format!("{} / {} / {} / {}", pct(v[0]), pct(v[1]), pct(v[2]), pct(v[3])))
    }));
    out
}

pub fn check_generalization(r: &EvalReport) -> Vec<Band> {
    vec![
        checked(r, Some(6), "lexicon drop on unseen verb+noun <= 15", ["lexicon/original", "lexicon/unseen-verb-noun"], |[o, u]| {
            (o - u <= 0.15 + EPS, format!("original {} unseen {} drop {:.1}", pct(o), pct(u), 100.0 * (o - u)))
        }),
        checked(r, Some(6), "hash-only drop on unseen verb+noun >= 20", ["hash-only/original", "hash-only/unseen-verb-noun"], |[o, u]| {
            (o - u >= 0.20 - EPS, format!("original {} unseen {} drop {:.1}", pct(o), pct(u), 100.0 * (o - u)))
        }),
    ]
}

pub fn check_ablation(r: &EvalReport) -> Vec<Band> {
    vec![
        checked(r, Some(7), "no cross negatives drops >= 20", ["full", "no-cross-negatives"], |[f, n]| {
            (f - n >= 0.20 - EPS, format!("full {} ablated {} drop {:.1}", pct(f), pct(n), 100.0 * (f - n)))
        }),
        checked(r, Some(7), "no flipped negatives changes <= 10", ["full", "no-flipped-negatives"], |[f, n]| {
            ((f - n).abs() <= 0.10 + EPS, format!("full {} ablated {} change {:+.1}", pct(f), pct(n), 100.0 * (n - f)))
        }),
        checked(r, None, "small data: noisy positives not worse", ["small-data-noisy", "small-data-alpha-0"], |[a, z]| {
            (a + EPS >= z, format!("alpha>0 {} alpha=0 {}", pct(a), pct(z)))
        }),
    ]
}

pub fn check_diagnostics(d: &Diagnostics) -> Vec<Band> {
    vec![
        band(
            Some(8),
            "temporal margin > 0.2 on >= 500 held-out episodes",
            d.temporal_episodes >= 500 && d.temporal_margin() > 0.2,
            format!(
                "{} episodes, forward {:.3} backward {:.3} margin {:.3}",
                d.temporal_episodes,
                d.reward_forward,
                d.reward_backward,
                d.temporal_margin()
            ),
        ),
        band(
            Some(9),
            "one-step rmse < 10% of mean step change",
            d.one_step_ratio() < 0.10,
            format!("rmse {:.4} mean change {:.4} ratio {:.3}", d.one_step_rmse, d.mean_step_change, d.one_step_ratio()),
        ),
        band(
            Some(9),
            "median 20-step rollout error < 0.05",
            d.rollout_error_median < 0.05,
            format!("median {:.4} p90 {:.4}", d.rollout_error_median, d.rollout_error_p90),
        ),
    ]
}
