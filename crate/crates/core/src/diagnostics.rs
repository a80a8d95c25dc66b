//! Numerical checks of the kernel and approximation properties, grouped into
//! named benchmarks with a pass/fail verdict per property.

use std::fmt;

use crate::approximation::{default_metric, error_profile, fit_empirical, minimal_separation};
use crate::error::{invalid, Result};
use crate::experiments::{gen_circle, SyntheticManifoldSet};
use crate::features::FeatureVec;
use crate::hermite::{hermite_batch, LocalizedKernelSpec};
use crate::kernels::KernelSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub benchmark: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {}/{}: {:.6e} ({})", self.benchmark, c.name, c.value, c.detail)?;
        }
        Ok(())
    }
}

fn check(name: &str, value: f64, pass: bool, detail: String) -> Check {
    Check { name: name.to_string(), value, pass, detail }
}

pub const BENCHMARKS: [&str; 7] =
    ["reduction", "orthonormality", "localization", "interpolation", "decay", "dominance", "tradeoff"];

pub fn run_benchmark(name: &str) -> Result<Report> {
    let checks = match name {
        "reduction" => reduction()?,
        "orthonormality" => orthonormality()?,
        "localization" => localization()?,
        "interpolation" => interpolation()?,
        "decay" => decay()?,
        "dominance" => dominance()?,
        "tradeoff" => tradeoff()?,
        other => return Err(invalid(format!("unknown benchmark `{other}`; expected one of {}", BENCHMARKS.join(", ")))),
    };
    Ok(Report { benchmark: name.to_string(), checks })
}

/// `max_x |Φ̃_{1,q}(x) e^{x²/2} / Φ̃_{1,q}(0) − 1|` on 201 points of `[0, 5]`.
pub fn gaussian_reduction_error(q: u32) -> Result<f64> {
    let k = LocalizedKernelSpec::new(1.0, q, 1.0)?;
    let peak = k.eval(0.0);
    Ok((0..=200)
        .map(|i| {
            let x = 5.0 * i as f64 / 200.0;
            (k.eval(x) * (0.5 * x * x).exp() / peak - 1.0).abs()
        })
        .fold(0.0, f64::max))
}

fn reduction() -> Result<Vec<Check>> {
    [1u32, 2, 18]
        .iter()
        .map(|&q| {
            let e = gaussian_reduction_error(q)?;
            Ok(check(&format!("q={q}"), e, e < 1e-10, "max deviation from a Gaussian at N=1, limit 1e-10".into()))
        })
        .collect()
}

/// `max_{j,k ≤ k_max} |∫ψ_jψ_k − δ_jk|` by the trapezoid rule on `[−L, L]`.
pub fn orthonormality_error(k_max: usize, half_width: f64, steps: usize) -> Result<f64> {
    let h = 2.0 * half_width / steps as f64;
    let mut gram = vec![vec![0.0; k_max + 1]; k_max + 1];
    for i in 0..=steps {
        let x = -half_width + i as f64 * h;
        let w = if i == 0 || i == steps { 0.5 * h } else { h };
        let e = hermite_batch(k_max, x)?;
        let g = (-0.5 * x * x).exp();
        for j in 0..=k_max {
            for k in 0..=j {
                gram[j][k] += w * e.values[j] * e.values[k] * g * g;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for j in 0..=k_max {
        for k in 0..=j {
            let target = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((gram[j][k] - target).abs());
        }
    }
    Ok(worst)
}

fn orthonormality() -> Result<Vec<Check>> {
    let e = orthonormality_error(20, 12.0, 4800)?;
    Ok(vec![check("psi_0..20", e, e < 1e-6, "trapezoid rule on [-12, 12], limit 1e-6".into())])
}

/// `sup_x |Φ̃_{N,q}(x)| max(1, (Nx)^S) / N^q` over a grid of `[0, x_max]`.
pub fn localization_constant(n: f64, q: u32, s: i32, x_max: f64, steps: usize) -> Result<f64> {
    let k = LocalizedKernelSpec::new(n, q, 1.0)?;
    Ok((0..=steps)
        .map(|i| {
            let x = x_max * i as f64 / steps as f64;
            k.eval(x).abs() * (n * x).powi(s).max(1.0) / n.powi(q as i32)
        })
        .fold(0.0, f64::max))
}

fn localization() -> Result<Vec<Check>> {
    let c4 = localization_constant(4.0, 2, 4, 20.0, 20_000)?;
    let c8 = localization_constant(8.0, 2, 4, 20.0, 20_000)?;
    let ratio = c4.max(c8) / c4.min(c8);
    Ok(vec![check(
        "constant ratio N=4/N=8",
        ratio,
        ratio < 3.0,
        format!("q=2, S=4: constants {c4:.4} and {c8:.4}, limit factor 3"),
    )])
}

/// Noiseless circle with the nodes and probes used by the interpolation benchmarks.
pub struct CircleBench {
    pub set: SyntheticManifoldSet,
    pub nodes: Vec<FeatureVec>,
    pub probes: Vec<FeatureVec>,
    pub truth: Vec<f64>,
    pub eta: f64,
}

pub fn circle_bench(ambient: usize, m: usize, noise: f64, probes: usize, seed: u64) -> Result<CircleBench> {
    let set = gen_circle(ambient, m, noise, seed)?;
    let nodes = set.node_features();
    let (probes, truth) = set.probes(probes);
    let eta = minimal_separation(&nodes, default_metric)?;
    Ok(CircleBench { set, nodes, probes, truth, eta })
}

/// Max node residual and dominance ratio of the interpolant.
pub fn interpolation_residual(bench: &CircleBench, spec: &KernelSpec) -> Result<(f64, f64)> {
    let model = fit_empirical(spec, &bench.nodes, &bench.set.truth)?;
    let mut worst: f64 = 0.0;
    for (y, f) in bench.nodes.iter().zip(&bench.set.truth) {
        worst = worst.max((model.evaluate(y)? - f).abs());
    }
    Ok((worst, model.dominance_ratio))
}

/// `sup |P(x)|` over probes farther than `η̃/3` from every node.
pub fn far_field_sup(bench: &CircleBench, spec: &KernelSpec) -> Result<f64> {
    let model = fit_empirical(spec, &bench.nodes, &bench.set.truth)?;
    let profile = error_profile(&model, &bench.truth, &bench.probes, default_metric)?;
    profile
        .sup_model_beyond(model.eta_tilde() / 3.0)
        .ok_or_else(|| invalid("no probe lies beyond the near-field radius"))
}

/// Sup error over all probes for each `N`.
pub fn sup_errors(bench: &CircleBench, ns: &[f64], q: u32, gamma: f64) -> Result<Vec<f64>> {
    ns.iter()
        .map(|&n| {
            let spec = KernelSpec::localized(n, q, gamma)?;
            let model = fit_empirical(&spec, &bench.nodes, &bench.set.truth)?;
            Ok(error_profile(&model, &bench.truth, &bench.probes, default_metric)?.sup_error())
        })
        .collect()
}

/// Seed of the synthetic circles used by `verify`.
pub const BENCH_SEED: u64 = 42;

fn interpolation() -> Result<Vec<Check>> {
    let bench = circle_bench(3, 20, 0.0, 1000, BENCH_SEED)?;
    let spec = KernelSpec::localized(8.0, 1, 2.0)?;
    let (res, dom) = interpolation_residual(&bench, &spec)?;
    Ok(vec![
        check("max node residual", res, res < 1e-8, "M=20, N=8, q=1, gamma=2, limit 1e-8".into()),
        check("dominance", dom, dom < 0.5, "limit 1/2".into()),
    ])
}

fn decay() -> Result<Vec<Check>> {
    let bench = circle_bench(3, 20, 0.0, 1000, BENCH_SEED)?;
    let s4 = far_field_sup(&bench, &KernelSpec::localized(4.0, 1, 2.0)?)?;
    let s8 = far_field_sup(&bench, &KernelSpec::localized(8.0, 1, 2.0)?)?;
    Ok(vec![check(
        "far-field sup N=8 vs N=4",
        s8 - s4,
        s8 < s4,
        format!("sup |P| beyond eta~/3: N=4 {s4:.6}, N=8 {s8:.6}"),
    )])
}

fn dominance() -> Result<Vec<Check>> {
    let bench = circle_bench(3, 10, 0.0, 10, BENCH_SEED)?;
    let ns = [2.0, 4.0, 8.0, 16.0];
    let ratios: Vec<f64> = ns
        .iter()
        .map(|&n| crate::approximation::dominance_diagnostic(&KernelSpec::localized(n, 1, 1.0)?, &bench.nodes))
        .collect::<Result<_>>()?;
    let monotone = ratios.windows(2).all(|w| w[1] < w[0]);
    Ok(vec![
        check("N=8, 10 nodes", ratios[2], ratios[2] < 0.5, "q=1, gamma=1, limit 1/2".into()),
        check("decreasing in N", ratios[3], monotone, format!("ratios at N=2,4,8,16: {ratios:.4?}")),
    ])
}

fn tradeoff() -> Result<Vec<Check>> {
    let bench = circle_bench(3, 20, 0.02, 1000, BENCH_SEED)?;
    let ns = [2.0, 4.0, 8.0, 16.0];
    let errs = sup_errors(&bench, &ns, 1, 1.0)?;
    let best = errs.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    Ok(vec![check(
        "interior minimum",
        ns[best],
        best > 0 && best + 1 < ns.len(),
        format!("noise 0.02, sup errors at N=2,4,8,16: {errs:.4?}"),
    )])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_benchmark_runs() {
        for b in BENCHMARKS {
            let r = run_benchmark(b).unwrap();
            assert!(!r.checks.is_empty());
            assert!(r.to_string().contains(b));
        }
        assert!(run_benchmark("nope").is_err());
    }

    #[test]
    fn orthonormality_detects_coarse_grid() {
        assert!(orthonormality_error(20, 12.0, 4800).unwrap() < 1e-6);
        assert!(orthonormality_error(20, 3.0, 100).unwrap() > 1e-3);
    }
}
