// SPDX-License-Identifier: Apache-2.0

//! The generative imputer and its inverse.
//!
//! Given data `x`, mask `m` (1 = observed) and noise `z`:
//!
//! ```text
//! u = x ⊙ m + z ⊙ (1 - m)
//! v = x ⊙ m + g(u) ⊙ (1 - m)
//! ```
//!
//! Observed entries of `v` equal those of `x`. When `g` is nonlinear the mask
//! is recoverable from `(u, v)` as `1[u == v]` (up to a measure-zero set of
//! collisions), which makes the map invertible:
//!
//! ```text
//! x ⊙ m       = v - g(u) ⊙ 1[u != v]
//! z ⊙ (1 - m) = u - v + g(u) ⊙ 1[u != v]
//! ```

use ndarray::{Array2, ArrayView2, Zip};

use crate::autograd::{Graph, Var};
use crate::data::{check_same_dim, DataMatrix, MaskMatrix, NoiseSource};
use crate::error::{Error, Result};
use crate::network::{Mode, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeImputer {
    g: Network,
}

impl GenerativeImputer {
    pub fn new(g: Network) -> Result<Self> {
        if g.in_dim() != g.out_dim() {
            return Err(Error::Network(format!(
                "imputer network must map R^d to R^d, got {} -> {}",
                g.in_dim(),
                g.out_dim()
            )));
        }
        Ok(Self { g })
    }

    pub fn data_dim(&self) -> usize {
        self.g.in_dim()
    }

    pub fn network(&self) -> &Network {
        &self.g
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.g
    }

    pub fn into_network(self) -> Network {
        self.g
    }

    /// Frozen copy with dropout disabled.
    pub fn frozen(&self) -> Self {
        let mut g = self.g.clone();
        g.set_mode(Mode::Eval);
        Self { g }
    }

    /// `(u, v)` on raw arrays; dropout follows the network's mode.
    pub fn impute_arrays(
        &self,
        x: ArrayView2<'_, f64>,
        m: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
        rng: &mut NoiseSource,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        check_same_dim("impute: x", (x.nrows(), self.data_dim()), x.dim())?;
        let mut failure = None;
        let out = impute_with(
            |u| match self.g.forward(u, rng) {
                Ok(out) => out,
                Err(e) => {
                    failure = Some(e);
                    Array2::zeros(u.dim())
                }
            },
            x,
            m,
            z,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    pub fn impute(
        &self,
        x: &DataMatrix,
        m: &MaskMatrix,
        z: &Array2<f64>,
        rng: &mut NoiseSource,
    ) -> Result<(DataMatrix, DataMatrix)> {
        let (u, v) = self.impute_arrays(x.view(), m.view(), z.view(), rng)?;
        let normalized = x.is_normalized();
        Ok((
            DataMatrix::new(u)?.with_normalized(normalized),
            DataMatrix::new(v)?.with_normalized(normalized),
        ))
    }

    /// Recovers `(x ⊙ m, m, z ⊙ (1 - m))` from `(u, v)`; `g` is applied without dropout.
    pub fn invert(
        &self,
        u: ArrayView2<'_, f64>,
        v: ArrayView2<'_, f64>,
        tol: f64,
    ) -> Result<(Array2<f64>, MaskMatrix, Array2<f64>)> {
        check_same_dim("invert: u", (u.nrows(), self.data_dim()), u.dim())?;
        let gu = self.g.forward_eval(u)?;
        invert_with(&gu, u, v, tol)
    }

    /// Records `(u, v)` on a graph. `x` may carry gradients (second imputation pass).
    pub fn impute_graph(
        &self,
        graph: &mut Graph,
        params: &[Var],
        x: Var,
        m: &Array2<f64>,
        z: &Array2<f64>,
        rng: &mut NoiseSource,
    ) -> (Var, Var) {
        let parts = impute_graph(&self.g, graph, params, x, m, z, rng);
        (parts.u, parts.v)
    }
}

/// Graph nodes of one imputation pass.
pub(crate) struct GraphImputation {
    pub u: Var,
    pub gu: Var,
    pub v: Var,
}

pub(crate) fn impute_graph(
    g: &Network,
    graph: &mut Graph,
    params: &[Var],
    x: Var,
    m: &Array2<f64>,
    z: &Array2<f64>,
    rng: &mut NoiseSource,
) -> GraphImputation {
    let mv = graph.constant(m.clone());
    let missing = graph.constant(m.mapv(|v| 1.0 - v));
    let zv = graph.constant(z * &m.mapv(|v| 1.0 - v));
    let kept = graph.mul(x, mv);
    let u = graph.add(kept, zv);
    let gu = g.forward_graph(graph, params, u, rng);
    let fill = graph.mul(gu, missing);
    let v = graph.add(kept, fill);
    GraphImputation { u, gu, v }
}

/// Imputation algebra for an arbitrary `g`.
pub fn impute_with(
    g: impl FnOnce(ArrayView2<'_, f64>) -> Array2<f64>,
    x: ArrayView2<'_, f64>,
    m: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_same_dim("impute: mask", x.dim(), m.dim())?;
    check_same_dim("impute: noise", x.dim(), z.dim())?;
    let kept = &x * &m;
    let missing = m.mapv(|v| 1.0 - v);
    let u = &kept + &(&z * &missing);
    let gu = g(u.view());
    check_same_dim("impute: g(u)", x.dim(), gu.dim())?;
    let v = &kept + &(&gu * &missing);
    Ok((u, v))
}

/// Observation mask `1[|u - v| <= tol]`.
pub fn recover_mask(
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    tol: f64,
) -> Result<MaskMatrix> {
    check_same_dim("recover_mask", u.dim(), v.dim())?;
    let mut out = Array2::zeros(u.dim());
    Zip::from(&mut out).and(u).and(v).for_each(|o, &a, &b| {
        *o = if (a - b).abs() <= tol { 1.0 } else { 0.0 };
    });
    MaskMatrix::new(out)
}

/// Inverse map given precomputed `g(u)`.
pub fn invert_with(
    gu: &Array2<f64>,
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    tol: f64,
) -> Result<(Array2<f64>, MaskMatrix, Array2<f64>)> {
    check_same_dim("invert: g(u)", u.dim(), gu.dim())?;
    let m = recover_mask(u, v, tol)?;
    let differs = m.complement();
    let correction = gu * &differs;
    let x_obs = &v - &correction;
    let z_miss = &(&u - &v) + &correction;
    Ok((x_obs, m, z_miss))
}
