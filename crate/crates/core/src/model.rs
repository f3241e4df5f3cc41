//! A full network: input embedding (or dense frames), one recurrent cell and
//! an output head, plus the batch and dropout-mask types the training code
//! feeds through it.

use crate::cells::{Cell, CellSpec, InitScheme};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};

/// What the network reads at each time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// Symbol indices looked up in an embedding of `vocab` rows.
    Symbols { vocab: usize },
    /// Dense binary frames of width `dim` (piano rolls); predicts the next frame.
    Frames { dim: usize },
}

impl InputKind {
    pub fn output_dim(self) -> usize {
        match self {
            InputKind::Symbols { vocab } => vocab,
            InputKind::Frames { dim } => dim,
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            InputKind::Symbols { .. } => LossKind::SoftmaxXent,
            InputKind::Frames { .. } => LossKind::BernoulliNll,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxXent,
    BernoulliNll,
}

/// Architecture description sufficient to build and census a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub cell: CellSpec,
    pub input: InputKind,
    pub tied: bool,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        match self.input {
            InputKind::Symbols { vocab } if vocab == 0 => Err(Error::contract("vocabulary must be non-empty")),
            InputKind::Frames { dim } if dim != self.cell.input_dim => Err(Error::contract(format!(
                "frame width {dim} must equal cell input width {}",
                self.cell.input_dim
            ))),
            InputKind::Frames { .. } if self.tied => Err(Error::contract("weight tying needs symbol input")),
            _ if self.tied && self.cell.input_dim != self.cell.hidden_dim => Err(Error::contract(format!(
                "weight tying needs embedding width {} = hidden width {}",
                self.cell.input_dim, self.cell.hidden_dim
            ))),
            _ => Ok(()),
        }
    }

    /// Number of head parameters: embedding, untied projection and output bias.
    pub fn head_param_count(&self) -> usize {
        let v = self.input.output_dim();
        let embed = match self.input {
            InputKind::Symbols { vocab } => vocab * self.cell.input_dim,
            InputKind::Frames { .. } => 0,
        };
        let proj = if self.tied { 0 } else { v * self.cell.hidden_dim };
        embed + proj + v
    }

    pub fn param_count(&self) -> usize {
        self.cell.param_count() + self.head_param_count()
    }

    /// Build a network: cell weights first, then embedding and projection, in
    /// that draw order. Output biases start at zero.
    pub fn init(&self, scheme: InitScheme, rng: &mut RngStream) -> Result<Network> {
        self.validate()?;
        let cell = self.cell.init(scheme, rng)?;
        let (m, n) = (self.cell.input_dim, self.cell.hidden_dim);
        let v = self.input.output_dim();
        let embedding = match self.input {
            InputKind::Symbols { vocab } => Some(scheme.input_matrix(rng, vocab, m)?),
            InputKind::Frames { .. } => None,
        };
        let projection = if self.tied { None } else { Some(scheme.input_matrix(rng, v, n)?) };
        Ok(Network {
            cell,
            heads: Heads {
                embedding,
                projection,
                bias: Vector::zeros(v),
            },
            input: self.input,
        })
    }
}

/// Input and output mappings around the cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    /// `V × m`; absent for frame input.
    pub embedding: Option<Matrix>,
    /// `V × n`; absent when tied to the embedding.
    pub projection: Option<Matrix>,
    pub bias: Vector,
}

impl Heads {
    pub fn tied(&self) -> bool {
        self.projection.is_none()
    }

    /// Output projection, `V × n`.
    pub fn output_weights(&self) -> &Matrix {
        self.projection
            .as_ref()
            .or(self.embedding.as_ref())
            .expect("heads have either a projection or a tied embedding")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub cell: Cell,
    pub heads: Heads,
    pub input: InputKind,
}

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
}

fn mat<'a>(name: String, m: &'a Matrix) -> TensorRef<'a> {
    TensorRef {
        name,
        dims: vec![m.rows(), m.cols()],
        data: m.as_slice(),
    }
}

fn vec_ref<'a>(name: String, v: &'a Vector) -> TensorRef<'a> {
    TensorRef {
        name,
        dims: vec![v.len()],
        data: v.as_slice(),
    }
}

fn mat_mut<'a>(name: String, m: &'a mut Matrix) -> TensorMut<'a> {
    let dims = vec![m.rows(), m.cols()];
    TensorMut {
        name,
        dims,
        data: m.as_mut_slice(),
    }
}

fn vec_mut<'a>(name: String, v: &'a mut Vector) -> TensorMut<'a> {
    let dims = vec![v.len()];
    TensorMut {
        name,
        dims,
        data: v.as_mut_slice(),
    }
}

impl Cell {
    /// Every parameter tensor in a fixed, documented order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        match self {
            Cell::Rnn(p) => {
                out.push(mat("cell.w".into(), &p.w));
                out.push(mat("cell.r".into(), &p.r));
                out.push(vec_ref("cell.b".into(), &p.b));
            }
            Cell::Rhn(p) => {
                out.push(mat("cell.w_h".into(), &p.w_h));
                out.push(mat("cell.w_t".into(), &p.w_t));
                if let Some(w) = &p.w_c {
                    out.push(mat("cell.w_c".into(), w));
                }
                for (k, l) in p.layers.iter().enumerate() {
                    out.push(mat(format!("cell.l{k}.r_h"), &l.r_h));
                    out.push(mat(format!("cell.l{k}.r_t"), &l.r_t));
                    if let Some(r) = &l.r_c {
                        out.push(mat(format!("cell.l{k}.r_c"), r));
                    }
                    out.push(vec_ref(format!("cell.l{k}.b_h"), &l.b_h));
                    out.push(vec_ref(format!("cell.l{k}.b_t"), &l.b_t));
                    if let Some(b) = &l.b_c {
                        out.push(vec_ref(format!("cell.l{k}.b_c"), b));
                    }
                }
            }
            Cell::Dt(p) => {
                out.push(mat("cell.w".into(), &p.w));
                for (k, l) in p.layers.iter().enumerate() {
                    out.push(mat(format!("cell.l{k}.r"), &l.r));
                    out.push(vec_ref(format!("cell.l{k}.b"), &l.b));
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        match self {
            Cell::Rnn(p) => {
                out.push(mat_mut("cell.w".into(), &mut p.w));
                out.push(mat_mut("cell.r".into(), &mut p.r));
                out.push(vec_mut("cell.b".into(), &mut p.b));
            }
            Cell::Rhn(p) => {
                out.push(mat_mut("cell.w_h".into(), &mut p.w_h));
                out.push(mat_mut("cell.w_t".into(), &mut p.w_t));
                if let Some(w) = &mut p.w_c {
                    out.push(mat_mut("cell.w_c".into(), w));
                }
                for (k, l) in p.layers.iter_mut().enumerate() {
                    out.push(mat_mut(format!("cell.l{k}.r_h"), &mut l.r_h));
                    out.push(mat_mut(format!("cell.l{k}.r_t"), &mut l.r_t));
                    if let Some(r) = &mut l.r_c {
                        out.push(mat_mut(format!("cell.l{k}.r_c"), r));
                    }
                    out.push(vec_mut(format!("cell.l{k}.b_h"), &mut l.b_h));
                    out.push(vec_mut(format!("cell.l{k}.b_t"), &mut l.b_t));
                    if let Some(b) = &mut l.b_c {
                        out.push(vec_mut(format!("cell.l{k}.b_c"), b));
                    }
                }
            }
            Cell::Dt(p) => {
                out.push(mat_mut("cell.w".into(), &mut p.w));
                for (k, l) in p.layers.iter_mut().enumerate() {
                    out.push(mat_mut(format!("cell.l{k}.r"), &mut l.r));
                    out.push(vec_mut(format!("cell.l{k}.b"), &mut l.b));
                }
            }
        }
        out
    }
}

impl Network {
    pub fn output_dim(&self) -> usize {
        self.heads.bias.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.hidden_dim()
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = self.cell.tensors();
        if let Some(e) = &self.heads.embedding {
            out.push(mat("head.embedding".into(), e));
        }
        if let Some(p) = &self.heads.projection {
            out.push(mat("head.projection".into(), p));
        }
        out.push(vec_ref("head.bias".into(), &self.heads.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = self.cell.tensors_mut();
        if let Some(e) = &mut self.heads.embedding {
            out.push(mat_mut("head.embedding".into(), e));
        }
        if let Some(p) = &mut self.heads.projection {
            out.push(mat_mut("head.projection".into(), p));
        }
        out.push(vec_mut("head.bias".into(), &mut self.heads.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Same structure with every entry zero.
    pub fn zeros_like(&self) -> Network {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Cell input for one step, `B × m`, with embedding and input masks applied.
    pub(crate) fn embed(&self, data: &StepData, masks: Option<&DropoutMasks>) -> Result<Matrix> {
        let mut x = match (data, &self.heads.embedding, self.input) {
            (StepData::Symbols(ids), Some(e), InputKind::Symbols { vocab }) => {
                let mut x = Matrix::zeros(ids.len(), e.cols());
                for (b, &id) in ids.iter().enumerate() {
                    if id >= vocab {
                        return Err(Error::contract(format!("symbol {id} outside vocabulary of {vocab}")));
                    }
                    let scale = masks.and_then(|m| m.embed.as_ref()).map_or(1.0, |m| m[(b, id)]);
                    for (dst, src) in x.row_mut(b).iter_mut().zip(e.row(id)) {
                        *dst = src * scale;
                    }
                }
                x
            }
            (StepData::Frames(f), None, InputKind::Frames { dim }) => {
                if f.cols() != dim {
                    return Err(Error::dims("frame input", dim, f.cols()));
                }
                f.clone()
            }
            _ => return Err(Error::contract("step input does not match the network's input kind")),
        };
        if let Some(m) = masks.and_then(|m| m.input.as_ref()) {
            crate::cells::ops::mul_assign(&mut x, m);
        }
        Ok(x)
    }
}

/// One time step of inputs or targets for every stream in a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum StepData {
    Symbols(Vec<usize>),
    /// `B × D` binary frames.
    Frames(Matrix),
}

impl StepData {
    pub fn batch_size(&self) -> usize {
        match self {
            StepData::Symbols(v) => v.len(),
            StepData::Frames(m) => m.rows(),
        }
    }
}

/// A truncated-BPTT window: `inputs[t]` predicts `targets[t]`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Batch {
    pub inputs: Vec<StepData>,
    pub targets: Vec<StepData>,
    /// Optional `[t][b]` flags; steps marked false contribute no loss.
    pub valid: Option<Vec<Vec<bool>>>,
}

impl Batch {
    pub fn new(inputs: Vec<StepData>, targets: Vec<StepData>) -> Self {
        Self {
            inputs,
            targets,
            valid: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, StepData::batch_size)
    }

    pub(crate) fn is_valid(&self, t: usize, b: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[t][b])
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::dims("batch targets", self.inputs.len(), self.targets.len()));
        }
        let bs = self.batch_size();
        for (t, (x, y)) in self.inputs.iter().zip(&self.targets).enumerate() {
            if x.batch_size() != bs || y.batch_size() != bs {
                return Err(Error::dims("batch rows", bs, format!("step {t}")));
            }
        }
        if let Some(v) = &self.valid {
            if v.len() != self.len() || v.iter().any(|r| r.len() != bs) {
                return Err(Error::dims("batch validity flags", self.len(), v.len()));
            }
        }
        Ok(())
    }
}

/// Variational dropout masks for one sequence. Each mask holds entries in
/// `{0, 1/(1-p)}` and is reused at every time step.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DropoutMasks {
    /// `B × V`: drops whole symbol types per stream.
    pub embed: Option<Matrix>,
    /// `B × m`, on the cell input.
    pub input: Option<Matrix>,
    /// Empty, one mask shared by every recurrence layer, or one per layer.
    pub hidden: Vec<Matrix>,
    /// `B × n`, on the state fed to the output head.
    pub output: Option<Matrix>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::Family;

    fn spec(family: Family, tied: bool) -> NetworkSpec {
        NetworkSpec {
            cell: CellSpec::rhn(4, 4, 2).with_family(family),
            input: InputKind::Symbols { vocab: 7 },
            tied,
        }
    }

    #[test]
    fn census_matches_tensors() {
        let mut rng = RngStream::new(1);
        for family in [Family::Rnn, Family::Rhn, Family::Dt, Family::Dts] {
            for tied in [false, true] {
                let s = spec(family, tied);
                let net = s.init(InitScheme::Gaussian { std: 0.1 }, &mut rng).unwrap();
                assert_eq!(net.param_count(), s.param_count(), "{family} tied={tied}");
            }
        }
    }

    #[test]
    fn tying_removes_projection() {
        let (a, b) = (spec(Family::Rhn, false), spec(Family::Rhn, true));
        assert_eq!(a.param_count() - b.param_count(), 7 * 4);
    }

    #[test]
    fn tying_requires_square_embedding() {
        let mut s = spec(Family::Rhn, true);
        s.cell.input_dim = 3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn tensor_names_are_unique() {
        let mut rng = RngStream::new(2);
        let mut s = spec(Family::Rhn, false);
        s.cell.coupled_gates = false;
        let net = s.init(InitScheme::Gaussian { std: 0.1 }, &mut rng).unwrap();
        let names: Vec<String> = net.tensors().into_iter().map(|t| t.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }
}
