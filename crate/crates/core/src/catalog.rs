//! Named catalog systems.
//!
//! | id        | field                                   | params (default)         |
//! |-----------|-----------------------------------------|--------------------------|
//! | `quad1d`  | `x²` on `x ≠ 0`                         |                          |
//! | `lin1d`   | `a x`                                   | `a` (1)                  |
//! | `lindiag` | `(a1 x1, a2 x2)`                        | `a1` (1), `a2` (-0.5)    |
//! | `quad2d`  | polynomial field conjugate to `lindiag` | `a1` (1), `a2` (-0.5)    |
//! | `rect1d`  | `1`                                     |                          |
//! | `rect2d`  | `(1, 0)`                                |                          |
//! | `vdp`     | `(-x2, x1 - μ(1 - x1²) x2)`             | `mu` (1)                 |
//! | `tvdp`    | `vdp` pushed through `ln(a + e^{b x})`  | `mu` (1), `a` (1.2), `b` (-1.5) |
//! | `appB1`   | `(y, k y²/x)` on `x ≠ 0`                | `k` (2)                  |
//! | `appB2`   | `(a x, b y)`                            | `a` (1), `b` (2)         |
//! | `ex5a`    | `(x2, x1)`                              |                          |
//! | `ex5b`    | `(y1, -y2)`                             |                          |

use std::collections::BTreeMap;

use crate::domain::Domain;
use crate::dynsys::SystemSpec;
use crate::error::{Error, Result};
use crate::poly::Poly;

pub const IDS: [&str; 12] = [
    "quad1d", "lin1d", "lindiag", "quad2d", "rect1d", "rect2d", "vdp", "tvdp", "appB1", "appB2", "ex5a", "ex5b",
];

/// Default parameters for a catalog id.
pub fn defaults(id: &str) -> Result<BTreeMap<String, f64>> {
    let p: &[(&str, f64)] = match id {
        "quad1d" | "rect1d" | "rect2d" | "ex5a" | "ex5b" => &[],
        "lin1d" => &[("a", 1.0)],
        "lindiag" | "quad2d" => &[("a1", 1.0), ("a2", -0.5)],
        "vdp" => &[("mu", 1.0)],
        "tvdp" => &[("mu", 1.0), ("a", 1.2), ("b", -1.5)],
        "appB1" => &[("k", 2.0)],
        "appB2" => &[("a", 1.0), ("b", 2.0)],
        _ => return Err(Error::UnknownEntry(id.to_string())),
    };
    Ok(p.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

/// Merges `overrides` into the defaults, rejecting unknown names.
pub fn resolve_params(id: &str, overrides: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let mut p = defaults(id)?;
    for (k, v) in overrides {
        match p.get_mut(k) {
            Some(slot) => {
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("{id}: parameter {k} = {v}")));
                }
                *slot = *v;
            }
            None => return Err(Error::InvalidArgument(format!("{id}: unknown parameter `{k}`"))),
        }
    }
    Ok(p)
}

fn lin_poly(dim: usize, i: usize, c: f64) -> Poly {
    Poly::var(dim, i).scale(c)
}

/// `h(x) = (u, x2 − u²)` with `u = x1 − x2²`; the quadratic conjugacy
/// between `quad2d` and `lindiag`.
pub fn quad2d_h(x: &[f64]) -> Vec<f64> {
    let u = x[0] - x[1] * x[1];
    vec![u, x[1] - u * u]
}

pub fn quad2d_h_inv(z: &[f64]) -> Vec<f64> {
    let x2 = z[1] + z[0] * z[0];
    vec![z[0] + x2 * x2, x2]
}

/// `ln(a + e^{b x})` componentwise.
pub fn log_transform(a: f64, b: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| (a + (b * v).exp()).ln()).collect()
}

/// Inverse of [`log_transform`]; non-finite where `y ≤ ln a`.
pub fn log_transform_inv(a: f64, b: f64, y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| (v.exp() - a).ln() / b).collect()
}

fn quad2d_polys(a1: f64, a2: f64) -> Vec<Poly> {
    let t = |c: f64, e: [u32; 2]| (c, e);
    let terms1 = [
        // -2 a2 x2 (x1² - x2 - 2 x1 x2² + x2⁴)
        t(-2.0 * a2, [2, 1]),
        t(2.0 * a2, [0, 2]),
        t(4.0 * a2, [1, 3]),
        t(-2.0 * a2, [0, 5]),
        // a1 (x1 + 4 x1² x2 - x2² - 8 x1 x2³ + 4 x2⁵)
        t(a1, [1, 0]),
        t(4.0 * a1, [2, 1]),
        t(-a1, [0, 2]),
        t(-8.0 * a1, [1, 3]),
        t(4.0 * a1, [0, 5]),
    ];
    let terms2 = [
        // 2 a1 (x1 - x2²)²
        t(2.0 * a1, [2, 0]),
        t(-4.0 * a1, [1, 2]),
        t(2.0 * a1, [0, 4]),
        // -a2 (x1² - x2 - 2 x1 x2² + x2⁴)
        t(-a2, [2, 0]),
        t(a2, [0, 1]),
        t(2.0 * a2, [1, 2]),
        t(-a2, [0, 4]),
    ];
    let mk = |ts: &[(f64, [u32; 2])]| {
        let mut p = Poly::zero(2);
        for (c, e) in ts {
            p.add_term(e.to_vec(), *c);
        }
        p
    };
    vec![mk(&terms1), mk(&terms2)]
}

fn vdp_field(mu: f64, x: &[f64]) -> [f64; 2] {
    [-x[1], x[0] - mu * (1.0 - x[0] * x[0]) * x[1]]
}

/// Builds a catalog system with parameter overrides.
pub fn system(id: &str, overrides: &BTreeMap<String, f64>) -> Result<SystemSpec> {
    let p = resolve_params(id, overrides)?;
    let s = match id {
        "quad1d" => SystemSpec::from_polynomials(id, vec![Poly::monomial(vec![2], 1.0)], Domain::Punctured)
            .with_flow(|x0, t| {
                let den = 1.0 - x0[0] * t;
                (den > 0.0).then(|| vec![x0[0] / den])
            }),
        "lin1d" => {
            let a = p["a"];
            SystemSpec::from_polynomials(id, vec![lin_poly(1, 0, a)], Domain::All)
                .with_flow(move |x0, t| Some(vec![x0[0] * (a * t).exp()]))
        }
        "lindiag" | "appB2" => {
            let (a1, a2) = if id == "lindiag" { (p["a1"], p["a2"]) } else { (p["a"], p["b"]) };
            SystemSpec::from_polynomials(id, vec![lin_poly(2, 0, a1), lin_poly(2, 1, a2)], Domain::All)
                .with_flow(move |x0, t| Some(vec![x0[0] * (a1 * t).exp(), x0[1] * (a2 * t).exp()]))
        }
        "quad2d" => {
            let (a1, a2) = (p["a1"], p["a2"]);
            SystemSpec::from_polynomials(id, quad2d_polys(a1, a2), Domain::All).with_flow(move |x0, t| {
                let z = quad2d_h(x0);
                Some(quad2d_h_inv(&[z[0] * (a1 * t).exp(), z[1] * (a2 * t).exp()]))
            })
        }
        "rect1d" => SystemSpec::from_polynomials(id, vec![Poly::constant(1, 1.0)], Domain::All)
            .with_flow(|x0, t| Some(vec![x0[0] + t])),
        "rect2d" => SystemSpec::from_polynomials(id, vec![Poly::constant(2, 1.0), Poly::zero(2)], Domain::All)
            .with_flow(|x0, t| Some(vec![x0[0] + t, x0[1]])),
        "ex5a" => SystemSpec::from_polynomials(id, vec![Poly::var(2, 1), Poly::var(2, 0)], Domain::All)
            .with_flow(|x0, t| {
                let (c, s) = (t.cosh(), t.sinh());
                Some(vec![c * x0[0] + s * x0[1], s * x0[0] + c * x0[1]])
            }),
        "ex5b" => SystemSpec::from_polynomials(id, vec![Poly::var(2, 0), Poly::var(2, 1).scale(-1.0)], Domain::All)
            .with_flow(|x0, t| Some(vec![x0[0] * t.exp(), x0[1] * (-t).exp()])),
        "vdp" => {
            let mu = p["mu"];
            let mut s = SystemSpec::new(id, 2, Domain::All, move |x| vdp_field(mu, x).to_vec());
            let x1 = Poly::var(2, 0);
            let x2 = Poly::var(2, 1);
            let cubic = x1.mul(&x1).mul(&x2).scale(mu);
            s.polynomial = Some(vec![x2.scale(-1.0), x1.add(&x2.scale(-mu)).add(&cubic)]);
            s
        }
        "tvdp" => {
            let (mu, a, b) = (p["mu"], p["a"], p["b"]);
            if !(a > 0.0) || b == 0.0 {
                return Err(Error::InvalidArgument(format!("tvdp requires a > 0 and b != 0, got a={a}, b={b}")));
            }
            let lo = a.ln();
            let dom = Domain::Box { lo: vec![lo; 2], hi: vec![f64::INFINITY; 2] };
            SystemSpec::new(id, 2, dom, move |y| {
                let x = log_transform_inv(a, b, y);
                let f = vdp_field(mu, &x);
                (0..2)
                    .map(|i| {
                        let e = (b * x[i]).exp();
                        b * e / (a + e) * f[i]
                    })
                    .collect()
            })
        }
        "appB1" => {
            let k = p["k"];
            let s = SystemSpec::new(id, 2, Domain::NonzeroCoord { axis: 0 }, move |x| {
                vec![x[1], k * x[1] * x[1] / x[0]]
            });
            if k == 2.0 {
                s.with_flow(|x0, t| {
                    let den = x0[0] - t * x0[1];
                    (den / x0[0] > 0.0).then(|| vec![x0[0] * x0[0] / den, x0[0] * x0[0] * x0[1] / (den * den)])
                })
            } else if k == 1.0 {
                s.with_flow(|x0, t| {
                    let e = (x0[1] / x0[0] * t).exp();
                    Some(vec![x0[0] * e, x0[1] * e])
                })
            } else {
                s
            }
        }
        _ => return Err(Error::UnknownEntry(id.to_string())),
    };
    Ok(s.with_params(p))
}

/// Catalog system with default parameters.
pub fn default_system(id: &str) -> Result<SystemSpec> {
    system(id, &BTreeMap::new())
}
