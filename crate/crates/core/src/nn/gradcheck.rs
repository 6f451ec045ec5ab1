//! Central finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Maximum elementwise relative error.
    pub rel_tol: f64,
    /// Differences below this absolute size always pass.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.mismatches.is_empty()
    }
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences for every scalar of every parameter in `store`.
pub fn check_gradients<F>(store: &ParamStore, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let v = f(&mut tape)?;
        Ok(tape.scalar(v))
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    for (id, p) in store.iter() {
        let grad: Vec<f64> = analytic.get(id).iter().copied().collect();
        let originals: Vec<f64> = p.value.iter().copied().collect();
        for (index, &orig) in originals.iter().enumerate() {
            let set = |probe: &mut ParamStore, v: f64| {
                *probe
                    .get_mut(id)
                    .value
                    .iter_mut()
                    .nth(index)
                    .expect("index within parameter") = v;
            };
            set(&mut probe, orig + cfg.step);
            let plus = eval(&probe)?;
            set(&mut probe, orig - cfg.step);
            let minus = eval(&probe)?;
            set(&mut probe, orig);
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let diff = (numeric - grad[index]).abs();
            let rel = diff / numeric.abs().max(grad[index].abs()).max(f64::MIN_POSITIVE);
            report.checked += 1;
            if diff > cfg.abs_floor {
                report.worst_rel = report.worst_rel.max(rel);
                if rel > cfg.rel_tol {
                    report.mismatches.push(Mismatch {
                        param: p.name.clone(),
                        index,
                        analytic: grad[index],
                        numeric,
                    });
                }
            }
        }
    }
    Ok(report)
}

fn random_store(shapes: &[(&str, (usize, usize))], seed: u64) -> ParamStore {
    use rand::Rng as _;
    let mut rng = crate::audio::rng_from_seed(seed);
    let mut store = ParamStore::new();
    for (name, (r, c)) in shapes {
        let v = ndarray::Array2::from_shape_fn((*r, *c), |_| rng.random_range(-1.0..1.0));
        store.add(*name, v, super::params::Constraint::None);
    }
    store
}

/// Projects a tensor onto fixed random weights so every output element
/// contributes a distinct amount to the scalar.
fn project(tape: &mut Tape<'_>, x: Var, seed: u64) -> Result<Var> {
    use rand::Rng as _;
    let mut rng = crate::audio::rng_from_seed(seed ^ 0x5eed);
    let dim = tape.value(x).dim();
    let r = tape.input(ndarray::Array2::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0)));
    let m = tape.mul(x, r)?;
    Ok(tape.sum(m))
}

/// Runs the finite-difference check on every tape primitive with small
/// random operands. Returns one report per primitive.
pub fn primitive_suite(cfg: &GradCheckConfig) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use super::kernels::{ConvSpec, ElnConfig, VarianceCentering};
    use super::params::Constraint;

    let p = |t: &mut Tape<'_>, name: &str| {
        let id = t.store().id(name).expect("parameter in suite store");
        t.param(id)
    };
    let small_eln = ElnConfig {
        alpha: 0.8,
        n_taps: 6,
        ..ElnConfig::default()
    };
    let mut out = Vec::new();
    let mut run = |name: &'static str, shapes: &[(&str, (usize, usize))], f: &dyn Fn(&mut Tape<'_>) -> Result<Var>| -> Result<()> {
        let store = random_store(shapes, out.len() as u64 + 1);
        let seed = out.len() as u64;
        let report = check_gradients(
            &store,
            |t| {
                let y = f(t)?;
                if t.value(y).dim() == (1, 1) {
                    Ok(y)
                } else {
                    project(t, y, seed)
                }
            },
            cfg,
        )?;
        out.push((name, report));
        Ok(())
    };
    run("conv1x1", &[("x", (3, 7)), ("w", (4, 3)), ("b", (4, 1))], &|t| {
        let (x, w, b) = (p(t, "x"), p(t, "w"), p(t, "b"));
        t.conv1x1(x, w, Some(b))
    })?;
    run("conv1d", &[("x", (2, 9)), ("w", (3, 6)), ("b", (3, 1))], &|t| {
        let (x, w, b) = (p(t, "x"), p(t, "w"), p(t, "b"));
        t.conv1d(x, w, Some(b), ConvSpec::same(3, 2, 1))
    })?;
    run("depthwise_causal", &[("x", (3, 10)), ("w", (3, 3)), ("b", (3, 1))], &|t| {
        let (x, w, b) = (p(t, "x"), p(t, "w"), p(t, "b"));
        t.depthwise(x, w, Some(b), ConvSpec::causal(3, 2))
    })?;
    run("depthwise_lookahead", &[("x", (3, 10)), ("w", (3, 5))], &|t| {
        let (x, w) = (p(t, "x"), p(t, "w"));
        t.depthwise(x, w, None, ConvSpec::same(5, 1, 2))
    })?;
    run("prelu", &[("x", (3, 8)), ("a", (1, 1))], &|t| {
        let (x, a) = (p(t, "x"), p(t, "a"));
        Ok(t.prelu(x, a))
    })?;
    run("sigmoid", &[("x", (3, 5))], &|t| {
        let x = p(t, "x");
        Ok(t.sigmoid(x))
    })?;
    run("relu", &[("x", (3, 5))], &|t| {
        let x = p(t, "x");
        Ok(t.relu(x))
    })?;
    run("softplus", &[("x", (3, 5))], &|t| {
        let x = p(t, "x");
        Ok(t.softplus(x))
    })?;
    run("add_sub_mul", &[("a", (2, 6)), ("b", (2, 6))], &|t| {
        let (a, b) = (p(t, "a"), p(t, "b"));
        let s = t.add(a, b)?;
        let d = t.sub(a, b)?;
        t.mul(s, d)
    })?;
    run("scale_rows", &[("x", (3, 6)), ("s", (3, 1))], &|t| {
        let (x, s) = (p(t, "x"), p(t, "s"));
        t.scale_rows(x, s)
    })?;
    run("concat", &[("a", (2, 5)), ("b", (3, 5))], &|t| {
        let (a, b) = (p(t, "a"), p(t, "b"));
        t.concat(a, b)
    })?;
    for (name, cfg) in [
        ("eln_per_frame", small_eln),
        ("eln_current", ElnConfig { centering: VarianceCentering::Current, ..small_eln }),
        ("eln_omega_0.4", small_eln.with_omega(0.4)),
        ("eln_default", ElnConfig::default()),
    ] {
        run(name, &[("x", (4, 14)), ("g", (4, 1)), ("b", (4, 1))], &move |t| {
            let (x, g, b) = (p(t, "x"), p(t, "g"), p(t, "b"));
            t.eln(x, g, b, &cfg)
        })?;
    }
    run("overlap_add", &[("x", (6, 5))], &|t| {
        let x = p(t, "x");
        Ok(t.overlap_add(x, 2, 3, 9))
    })?;
    for (name, zero_mean) in [("sisnr", false), ("sisnr_zero_mean", true)] {
        run(name, &[("e", (1, 24))], &move |t| {
            let e = p(t, "e");
            let target: Vec<f64> = (0..24).map(|n| (n as f64 * 0.7).sin()).collect();
            t.sisnr(e, &target, zero_mean)
        })?;
    }
    run("combine", &[("a", (1, 1)), ("b", (1, 1))], &|t| {
        let (a, b) = (p(t, "a"), p(t, "b"));
        let a2 = t.mul(a, a)?;
        Ok(t.combine(&[(a2, 0.3), (b, -1.7)]))
    })?;

    let mut store = ParamStore::new();
    store.add("u", ndarray::Array2::from_shape_vec((2, 1), vec![-0.4, 1.3]).unwrap(), Constraint::Positive);
    store.add("x", ndarray::Array2::from_shape_vec((2, 3), vec![0.2, -1.0, 0.5, 0.9, -0.3, 0.1]).unwrap(), Constraint::None);
    let report = check_gradients(
        &store,
        |t| {
            let u = t.param(store.id("u").unwrap());
            let x = t.param(store.id("x").unwrap());
            let y = t.scale_rows(x, u)?;
            project(t, y, 99)
        },
        cfg,
    )?;
    out.push(("positive_param", report));
    Ok(out)
}
