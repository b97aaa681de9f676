//! The analysis-facing recurrent cell: `h' = A x + s_h(W x + U a + b)`,
//! `z' = s_z(V h')`.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeRef};
use super::tensor::Tensor;
use super::KernelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: NodeRef) -> NodeRef {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// Parameters of the theory cell. `a_mat` is `dh x dx`, `w` is `dh x dx`,
/// `u` is `dh x da`, `v` is `dz x dh`, `bias` is `dh`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryCellParams {
    pub a_mat: Tensor,
    pub w: Tensor,
    pub u: Tensor,
    pub v: Tensor,
    pub bias: Tensor,
    pub sigma_h: Activation,
    pub sigma_z: Activation,
}

impl TheoryCellParams {
    pub fn zeros(dx: usize, da: usize, dh: usize, dz: usize) -> Self {
        Self {
            a_mat: Tensor::zeros(&[dh, dx]),
            w: Tensor::zeros(&[dh, dx]),
            u: Tensor::zeros(&[dh, da]),
            v: Tensor::zeros(&[dz, dh]),
            bias: Tensor::zeros(&[dh]),
            sigma_h: Activation::Relu,
            sigma_z: Activation::Tanh,
        }
    }
}

/// One differentiable step of the theory cell inside an existing graph.
pub fn theory_rnn_step_graph(
    g: &mut Graph,
    x: NodeRef,
    action: NodeRef,
    p: &TheoryCellParams,
) -> Result<(NodeRef, NodeRef), KernelError> {
    let a_mat = g.constant(p.a_mat.clone());
    let w = g.constant(p.w.clone());
    let u = g.constant(p.u.clone());
    let v = g.constant(p.v.clone());
    let bias = g.constant(p.bias.clone());

    let ax = g.linear(x, a_mat, None)?;
    let wx = g.linear(x, w, Some(bias))?;
    let ua = g.linear(action, u, None)?;
    let pre = g.add(wx, ua)?;
    let act = p.sigma_h.apply(g, pre);
    let h_next = g.add(ax, act)?;
    let vh = g.linear(h_next, v, None)?;
    let z_next = p.sigma_z.apply(g, vh);
    Ok((h_next, z_next))
}

/// Plain evaluation of the theory cell on vectors.
pub fn theory_rnn_step(
    x: &Tensor,
    action: &Tensor,
    p: &TheoryCellParams,
) -> Result<(Tensor, Tensor), KernelError> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let an = g.constant(action.clone());
    let (h, z) = theory_rnn_step_graph(&mut g, xn, an, p)?;
    Ok((g.value(h).clone(), g.value(z).clone()))
}
