use super::kernels::{dot, matmul, matmul_a_bt, matmul_at_b, norm};
use super::{AutodiffError, Tensor};

/// Norm threshold below which normalization is refused.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Exp(Var),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    NormalizeRows { input: Var, norms: Vec<f64> },
    RowDot(Var, Var),
    CrossEntropyRows { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    EmbedBag { table: Var, bags: Vec<Vec<usize>> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations.
///
/// Every operation appends one node; [`Tape::backward`] walks the nodes in
/// exact reverse order, so a node's gradient is complete before it is
/// propagated to its inputs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one reverse sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the root with respect to `var`, if `var` was reached.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient for `var` into `tensor`'s accumulator. Unreached
    /// leaves contribute zero.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) -> Result<(), AutodiffError> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: vec![a.0, a.1], right: vec![b.0, b.1] }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    fn rg(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Records a leaf. It receives gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.rows(), tensor.cols(), tensor.values().to_vec(), tensor.requires_grad(), Op::Leaf)
    }

    /// Records a leaf that always receives gradients.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.rows(), tensor.cols(), tensor.values().to_vec(), true, Op::Leaf)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var, AutodiffError> {
        if rows * cols != values.len() || rows == 0 || cols == 0 {
            return Err(AutodiffError::InvalidShape { shape: vec![rows, cols], len: values.len() });
        }
        Ok(self.push(rows, cols, values, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Copies a node's value out as a rank-2 tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("node shape is consistent")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.dims(a);
        let (k2, p) = self.dims(b);
        if k != k2 {
            return Err(mismatch("matmul", (m, k), (k2, p)));
        }
        let out = matmul(self.value(a), self.value(b), m, k, p);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, p, out, rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(c, r, out, rg, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), AutodiffError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(mismatch(op, da, db));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, rg, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, rg, Op::Mul(a, b)))
    }

    /// Adds a `1 × n` bias to every row of an `m × n` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let (br, bc) = self.dims(bias);
        if br != 1 || bc != c {
            return Err(mismatch("add_row_bias", (r, c), (br, bc)));
        }
        let b = self.value(bias);
        let out = self.value(a).chunks(c).flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y)).collect();
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(r, c, out, rg, Op::AddRowBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x * factor).collect();
        let rg = self.rg(a);
        self.push(r, c, out, rg, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x + offset).collect();
        let rg = self.rg(a);
        self.push(r, c, out, rg, Op::AddScalar(a))
    }

    /// Multiplies every entry of `a` by the `1 × 1` node `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        if self.dims(s) != (1, 1) {
            return Err(mismatch("mul_scalar_var", self.dims(a), self.dims(s)));
        }
        let (r, c) = self.dims(a);
        let sv = self.scalar(s);
        let out = self.value(a).iter().map(|x| x * sv).collect();
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(r, c, out, rg, Op::MulScalarVar(a, s)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x.exp()).collect();
        let rg = self.rg(a);
        self.push(r, c, out, rg, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let rg = self.rg(a);
        self.push(r, c, out, rg, Op::Tanh(a))
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let rg = self.rg(a);
        self.push(r, c, out, rg, Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(1, 1, vec![s], rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(1, 1, vec![s], rg, Op::Mean(a))
    }

    /// Scales every row to unit ℓ2 norm. Rows with norm ≤ [`NORM_EPS`] are
    /// rejected.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let src = self.value(a);
        let mut norms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in src.chunks(c) {
            let n = norm(row);
            if !(n > NORM_EPS) {
                return Err(AutodiffError::Degenerate { op: "l2_normalize", norm: n });
            }
            norms.push(n);
            out.extend(row.iter().map(|x| x / n));
        }
        let rg = self.rg(a);
        Ok(self.push(r, c, out, rg, Op::NormalizeRows { input: a, norms }))
    }

    /// Row-wise inner products: `[m × n] , [m × n] → [m × 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape("row_dot", a, b)?;
        let out = self.value(a).chunks(c).zip(self.value(b).chunks(c)).map(|(x, y)| dot(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, 1, out, rg, Op::RowDot(a, b)))
    }

    /// Row-wise cosine similarity `aᵀb / (‖a‖‖b‖)`, `[m × n] → [m × 1]`.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("cosine_similarity", a, b)?;
        let an = self.l2_normalize_rows(a)?;
        let bn = self.l2_normalize_rows(b)?;
        self.row_dot(an, bn)
    }

    /// Per-row `−log softmax(row)[target]`, `[m × n] → [m × 1]`, stabilized by
    /// subtracting the row maximum.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(AutodiffError::Contract(format!(
                "softmax_cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        let src = self.value(logits);
        let mut probs = Vec::with_capacity(r * c);
        let mut out = Vec::with_capacity(r);
        for (row, &t) in src.chunks(c).zip(targets) {
            if t >= c {
                return Err(AutodiffError::IndexOutOfRange { index: t, len: c });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            out.push(z.ln() + max - row[t]);
            probs.extend(exps.iter().map(|e| e / z));
        }
        let rg = self.rg(logits);
        let op = Op::CrossEntropyRows { logits, targets: targets.to_vec(), probs };
        Ok(self.push(r, 1, out, rg, op))
    }

    /// Mean of the table rows selected by each bag: `[vocab × k] → [bags × k]`.
    ///
    /// Rows are summed in ascending index order, so any permutation of a bag
    /// yields bitwise the same result.
    pub fn embed_bag(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var, AutodiffError> {
        let (vocab, k) = self.dims(table);
        if bags.is_empty() {
            return Err(AutodiffError::Contract("embed_bag: no bags".into()));
        }
        let src = self.value(table);
        let mut out = vec![0.0; bags.len() * k];
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(AutodiffError::Contract("embed_bag: empty index sequence".into()));
            }
            let w = 1.0 / bag.len() as f64;
            let dst = &mut out[b * k..(b + 1) * k];
            let mut sorted = bag.clone();
            sorted.sort_unstable();
            for idx in sorted {
                if idx >= vocab {
                    return Err(AutodiffError::IndexOutOfRange { index: idx, len: vocab });
                }
                for (o, x) in dst.iter_mut().zip(&src[idx * k..(idx + 1) * k]) {
                    *o += w * x;
                }
            }
        }
        let rg = self.rg(table);
        Ok(self.push(bags.len(), k, out, rg, Op::EmbedBag { table, bags: bags.to_vec() }))
    }

    /// Reverse sweep from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Result<Grads, AutodiffError> {
        let (r, c) = self.dims(root);
        if (r, c) != (1, 1) {
            return Err(AutodiffError::NonScalarRoot { shape: vec![r, c] });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.rg(root) {
            return Ok(Grads { grads });
        }
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let send = |v: Var, delta: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let p = node.cols;
                    if self.rg(*a) {
                        send(*a, matmul_a_bt(&g, self.value(*b), m, p, k), &mut grads);
                    }
                    if self.rg(*b) {
                        send(*b, matmul_at_b(self.value(*a), &g, m, k, p), &mut grads);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.rows, node.cols);
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            out[j * r + i] = g[i * c + j];
                        }
                    }
                    send(*a, out, &mut grads);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    send(*b, g.iter().map(|x| -x).collect(), &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let da = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let db = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    send(*a, da, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::AddRowBias(a, bias) => {
                    let c = node.cols;
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                    send(*bias, db, &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Scale(a, f) => send(*a, g.iter().map(|x| x * f).collect(), &mut grads),
                Op::AddScalar(a) => send(*a, g, &mut grads),
                Op::MulScalarVar(a, s) => {
                    let sv = self.scalar(*s);
                    let ds = dot(&g, self.value(*a));
                    send(*a, g.iter().map(|x| x * sv).collect(), &mut grads);
                    send(*s, vec![ds], &mut grads);
                }
                Op::Exp(a) => {
                    let d = g.iter().zip(&node.value).map(|(x, y)| x * y).collect();
                    send(*a, d, &mut grads);
                }
                Op::Tanh(a) => {
                    let d = g.iter().zip(&node.value).map(|(x, y)| x * (1.0 - y * y)).collect();
                    send(*a, d, &mut grads);
                }
                Op::Relu(a) => {
                    let d = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(x, &inp)| if inp > 0.0 { *x } else { 0.0 })
                        .collect();
                    send(*a, d, &mut grads);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    send(*a, vec![g[0]; n], &mut grads);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    send(*a, vec![g[0] / n as f64; n], &mut grads);
                }
                Op::NormalizeRows { input, norms } => {
                    let c = node.cols;
                    let mut d = Vec::with_capacity(g.len());
                    for ((grow, yrow), n) in g.chunks(c).zip(node.value.chunks(c)).zip(norms) {
                        let yg = dot(yrow, grow);
                        d.extend(grow.iter().zip(yrow).map(|(gi, yi)| (gi - yi * yg) / n));
                    }
                    send(*input, d, &mut grads);
                }
                Op::RowDot(a, b) => {
                    let c = self.dims(*a).1;
                    let spread = |other: &[f64]| -> Vec<f64> {
                        other.chunks(c).zip(&g).flat_map(|(row, gi)| row.iter().map(move |x| x * gi)).collect()
                    };
                    let da = spread(self.value(*b));
                    let db = spread(self.value(*a));
                    send(*a, da, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::CrossEntropyRows { logits, targets, probs } => {
                    let c = self.dims(*logits).1;
                    let mut d = probs.clone();
                    for (i, (&t, gi)) in targets.iter().zip(&g).enumerate() {
                        let row = &mut d[i * c..(i + 1) * c];
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|x| *x *= gi);
                    }
                    send(*logits, d, &mut grads);
                }
                Op::EmbedBag { table, bags } => {
                    let (vocab, k) = self.dims(*table);
                    let mut d = vec![0.0; vocab * k];
                    for (bag, grow) in bags.iter().zip(g.chunks(k)) {
                        let w = 1.0 / bag.len() as f64;
                        for &idx in bag {
                            d[idx * k..(idx + 1) * k].iter_mut().zip(grow).for_each(|(o, x)| *o += w * x);
                        }
                    }
                    send(*table, d, &mut grads);
                }
            }
        }
        Ok(Grads { grads })
    }
}
