//! Compilers from polynomial targets to explicit stacked-block weights.
//!
//! The mechanism routes per-position indicator encodings through gated
//! blocks whose selective scans run in the additive linear regime. A
//! selector block isolates x_j as a one-position spike, a duplicator
//! block spreads the spike into a consecutive run, and a selective scan
//! whose step size reads the run itself telescopes two shifted copies of
//! the run into the exact power x_j^P. Full polynomials use a fourth
//! block that accumulates one such product per term. Every construction
//! is pure weight arithmetic; `verify_construction` certifies a built
//! stack against its target on random boxes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    mamba_block_forward, LayerWeights, LearnablePE, Linear, MambaBlockWeights, S6Variant,
    S6Weights,
};
use crate::numerics::{Matrix, Rng};
use crate::polyalg::{poly_to_json, MultiPoly};

/// Relative error at or below this certifies a construction.
pub const VERIFY_TOL: f64 = 1e-6;

/// Floor for the denominator of relative errors near zero targets.
const REL_FLOOR: f64 = 1e-12;

/// Builder budgets. Constructions needing more channels or padding than
/// this are refused rather than silently built at unusable sizes.
const MAX_CHANNELS: usize = 512;
const MAX_PADDED_LEN: usize = 4096;

/// A scalar power target c * x_j^P, read out after its run has closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonomialSpec {
    pub var_index: usize,
    pub power: u32,
    pub coeff: f64,
}

impl MonomialSpec {
    pub fn new(var_index: usize, power: u32, coeff: f64) -> Result<MonomialSpec> {
        let spec = MonomialSpec {
            var_index,
            power,
            coeff,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.var_index == 0 {
            return Err(Error::InvalidInput {
                reason: "monomial variable index is 1-based and must be positive".into(),
            });
        }
        if self.power == 0 {
            return Err(Error::InvalidInput {
                reason: "monomial power must be at least 1".into(),
            });
        }
        if !self.coeff.is_finite() {
            return Err(Error::InvalidInput {
                reason: "monomial coefficient must be finite".into(),
            });
        }
        Ok(())
    }

    /// The target as a polynomial over `n_vars` variables.
    pub fn target_poly(&self, n_vars: usize) -> MultiPoly {
        let mut poly = MultiPoly::zero(n_vars);
        poly.add_term(
            crate::polyalg::Monomial::from_pairs(&[(self.var_index as u32, self.power)]),
            self.coeff,
        );
        poly
    }
}

/// Channel manifest of a built stack: what each scan channel carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub width: usize,
    pub input_len: usize,
    pub padded_len: usize,
    pub names: Vec<String>,
}

/// Fixed ten-channel layout shared by the three monomial builder blocks.
///
/// Channel roles: `raw` carries the input, `ones` is the constant used to
/// pin the scan's input and output couplings at 1, the `_pe` channels are
/// indicator masks from the position table, `spike_full`/`spike_tail` hold
/// the selected value, `run_full`/`run_tail` hold its duplicated run and
/// the run with the first occurrence dropped, and `out` receives the
/// telescoped difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonomialLayout {
    pub input_len: usize,
    pub padded_len: usize,
}

impl MonomialLayout {
    pub const RAW: usize = 0;
    pub const ONES: usize = 1;
    pub const SELECT_PE: usize = 2;
    pub const WINDOW_FULL_PE: usize = 3;
    pub const WINDOW_TAIL_PE: usize = 4;
    pub const SPIKE_FULL: usize = 5;
    pub const SPIKE_TAIL: usize = 6;
    pub const RUN_FULL: usize = 7;
    pub const RUN_TAIL: usize = 8;
    pub const OUT: usize = 9;
    pub const WIDTH: usize = 10;

    pub fn new(input_len: usize, padded_len: usize) -> Result<MonomialLayout> {
        if input_len == 0 || padded_len < input_len {
            return Err(Error::InvalidInput {
                reason: format!(
                    "monomial layout needs 0 < input length <= padded length, got {input_len} and {padded_len}"
                ),
            });
        }
        if padded_len > MAX_PADDED_LEN {
            return Err(Error::Unsupported {
                reason: format!(
                    "padded length {padded_len} exceeds the builder budget {MAX_PADDED_LEN}"
                ),
            });
        }
        Ok(MonomialLayout {
            input_len,
            padded_len,
        })
    }

    pub fn channel_names() -> Vec<String> {
        [
            "raw",
            "ones",
            "select_pe",
            "window_full_pe",
            "window_tail_pe",
            "spike_full",
            "spike_tail",
            "run_full",
            "run_tail",
            "out",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    pub fn manifest(&self) -> ChannelLayout {
        ChannelLayout {
            width: Self::WIDTH,
            input_len: self.input_len,
            padded_len: self.padded_len,
            names: Self::channel_names(),
        }
    }

    /// Encoder that places the input on `raw`, holds `ones` at 1 through
    /// the padded region, and adds the given position table.
    pub fn encoder(&self, pe: Matrix) -> Result<StackEncoder> {
        let mut w_in = Matrix::zeros(Self::WIDTH, 1);
        w_in.set(Self::RAW, 0, 1.0);
        let mut bias = vec![0.0; Self::WIDTH];
        bias[Self::ONES] = 1.0;
        StackEncoder::new(w_in, bias, LearnablePE::new(pe))
    }

    fn blank_pe(&self) -> Matrix {
        Matrix::zeros(self.padded_len, Self::WIDTH)
    }
}

/// Input embedding of a constructed stack: a channel projection, a bias
/// held across the whole padded length, and a learned position table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackEncoder {
    pub w_in: Matrix,
    pub bias: Vec<f64>,
    pub pe: LearnablePE,
}

impl StackEncoder {
    pub fn new(w_in: Matrix, bias: Vec<f64>, pe: LearnablePE) -> Result<StackEncoder> {
        if bias.len() != w_in.rows() || pe.pe.cols() != w_in.rows() {
            return Err(Error::ShapeMismatch {
                op: "stack encoder",
                lhs: (w_in.rows(), w_in.cols()),
                rhs: (pe.pe.rows(), pe.pe.cols()),
            });
        }
        Ok(StackEncoder { w_in, bias, pe })
    }

    /// Projects, zero-pads to the table length, adds the table, then the
    /// bias. The bias lands on every padded column, so constant channels
    /// stay constant past the input's end.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let proj = self.w_in.matmul(x)?;
        let mut u = self.pe.apply(&proj)?;
        for r in 0..u.rows() {
            for c in 0..u.cols() {
                u.set(r, c, u.get(r, c) + self.bias[r]);
            }
        }
        Ok(u)
    }
}

/// A compiled model: encoder, gated blocks, and a single readout column
/// applied at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructedStack {
    pub encoder: StackEncoder,
    pub blocks: Vec<MambaBlockWeights>,
    pub readout: Vec<f64>,
    pub readout_position: usize,
    pub layout: ChannelLayout,
}

impl ConstructedStack {
    /// Channel activations after the last block, over the padded length.
    pub fn activations(&self, x: &[f64]) -> Result<Matrix> {
        if x.len() != self.layout.input_len {
            return Err(Error::InvalidInput {
                reason: format!(
                    "stack was built for inputs of length {}, got {}",
                    self.layout.input_len,
                    x.len()
                ),
            });
        }
        let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let mut u = self.encoder.encode(&xm)?;
        for block in &self.blocks {
            u = mamba_block_forward(block, &u)?;
        }
        Ok(u)
    }

    /// Scalar model output: readout column dotted with the activations at
    /// the readout position.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let u = self.activations(x)?;
        let k = self.readout_position;
        if k == 0 || k > u.cols() || self.readout.len() != u.rows() {
            return Err(Error::InvalidInput {
                reason: format!("readout position {k} outside padded length {}", u.cols()),
            });
        }
        let mut y = 0.0;
        for (d, w) in self.readout.iter().enumerate() {
            y += w * u.get(d, k - 1);
        }
        Ok(y)
    }
}

fn unit_row(width: usize, channel: usize) -> Matrix {
    let mut m = Matrix::zeros(1, width);
    m.set(0, channel, 1.0);
    m
}

/// Scan that copies its input: zero step and state feedback, input and
/// output couplings pinned at 1 through the `ones` channel.
fn identity_scan(width: usize, ones: usize) -> S6Weights {
    S6Weights::new(
        unit_row(width, ones),
        unit_row(width, ones),
        Matrix::zeros(1, width),
        Matrix::zeros(width, 1),
    )
    .expect("builder scan shapes are consistent")
}

/// Scan that prefix-sums every channel: state feedback 1, couplings 1.
fn running_sum_scan(width: usize, ones: usize) -> S6Weights {
    S6Weights::new(
        unit_row(width, ones),
        unit_row(width, ones),
        Matrix::zeros(1, width),
        Matrix::filled(width, 1, 1.0),
    )
    .expect("builder scan shapes are consistent")
}

/// Scan whose shared step reads the given channels, so the state multiplier
/// at time t is the value those channels carry at t.
fn selective_product_scan(width: usize, ones: usize, step_sources: &[usize]) -> S6Weights {
    let mut s_delta = Matrix::zeros(1, width);
    for &ch in step_sources {
        s_delta.set(0, ch, 1.0);
    }
    S6Weights::new(
        unit_row(width, ones),
        unit_row(width, ones),
        s_delta,
        Matrix::zeros(width, 1),
    )
    .expect("builder scan shapes are consistent")
}

/// Square routing map: `wires` are (destination row, source channel, value)
/// entries, `biases` set constant rows.
fn routing(width: usize, wires: &[(usize, usize, f64)], biases: &[(usize, f64)]) -> Linear {
    let mut w = Matrix::zeros(width, width);
    for &(row, col, v) in wires {
        w.set(row, col, w.get(row, col) + v);
    }
    let mut b = vec![0.0; width];
    for &(row, v) in biases {
        b[row] = v;
    }
    Linear { w, b }
}

/// Assembles a gated block in the construction regime: identity input map,
/// no convolution, no activation, additive linear scan, residual on.
fn gated_block(s6: S6Weights, gate: Linear, linear_out: Linear) -> MambaBlockWeights {
    let width = gate.out_dim();
    MambaBlockWeights::new(
        Linear::identity(width),
        Matrix::from_fn(width, 2, |_, c| if c == 1 { 1.0 } else { 0.0 }),
        gate,
        linear_out,
        s6,
        S6Variant::linear_poly(),
        false,
        false,
        true,
    )
    .expect("builder wiring is shape-consistent")
}

/// Stamps 1.0 on a channel over the 1-based inclusive position window.
/// An inverted window stamps nothing.
fn stamp_window(pe: &mut Matrix, channel: usize, first: usize, last: usize) {
    let last = last.min(pe.rows());
    for t in first..=last {
        pe.set(t - 1, channel, 1.0);
    }
}

/// Block 1: copies x_j from `raw` onto both spike channels as a spike at
/// position j. Returns the block and its position-table rows (the
/// indicator the gate routes).
pub fn build_position_selector(
    j: usize,
    layout: &MonomialLayout,
) -> Result<(MambaBlockWeights, Matrix)> {
    if j == 0 || j > layout.input_len {
        return Err(Error::InvalidInput {
            reason: format!(
                "selector position {j} outside the input range 1..={}",
                layout.input_len
            ),
        });
    }
    let w = MonomialLayout::WIDTH;
    let mut pe = layout.blank_pe();
    stamp_window(&mut pe, MonomialLayout::SELECT_PE, j, j);
    let gate = routing(w, &[(MonomialLayout::RAW, MonomialLayout::SELECT_PE, 1.0)], &[]);
    let out = routing(
        w,
        &[
            (MonomialLayout::SPIKE_FULL, MonomialLayout::RAW, 1.0),
            (MonomialLayout::SPIKE_TAIL, MonomialLayout::RAW, 1.0),
        ],
        &[],
    );
    let block = gated_block(identity_scan(w, MonomialLayout::ONES), gate, out);
    Ok((block, pe))
}

/// Block 2: prefix-sums the spikes and windows the sums back down, so
/// `run_full` carries `copies` consecutive occurrences of the spiked value
/// starting at j and `run_tail` the same run with its first position
/// dropped. Fill outside the windows is zero; the power block supplies its
/// own fill. Returns the block and its window mask rows.
pub fn build_duplicator(
    j: usize,
    copies: u32,
    layout: &MonomialLayout,
) -> Result<(MambaBlockWeights, Matrix)> {
    if copies == 0 {
        return Err(Error::InvalidInput {
            reason: "duplicator needs at least one copy".into(),
        });
    }
    let end = j + copies as usize;
    if j == 0 || end > layout.padded_len {
        return Err(Error::InvalidInput {
            reason: format!(
                "duplicated run {j}..={} exceeds the padded length {}",
                end - 1,
                layout.padded_len
            ),
        });
    }
    let w = MonomialLayout::WIDTH;
    let mut pe = layout.blank_pe();
    stamp_window(&mut pe, MonomialLayout::WINDOW_FULL_PE, j, end - 1);
    stamp_window(&mut pe, MonomialLayout::WINDOW_TAIL_PE, j + 1, end - 1);
    let gate = routing(
        w,
        &[
            (
                MonomialLayout::SPIKE_FULL,
                MonomialLayout::WINDOW_FULL_PE,
                1.0,
            ),
            (
                MonomialLayout::SPIKE_TAIL,
                MonomialLayout::WINDOW_TAIL_PE,
                1.0,
            ),
        ],
        &[],
    );
    let out = routing(
        w,
        &[
            (MonomialLayout::RUN_FULL, MonomialLayout::SPIKE_FULL, 1.0),
            (MonomialLayout::RUN_TAIL, MonomialLayout::SPIKE_TAIL, 1.0),
        ],
        &[],
    );
    let block = gated_block(running_sum_scan(w, MonomialLayout::ONES), gate, out);
    Ok((block, pe))
}

/// Block 3: the scan's step size reads `run_full`, so over the run both
/// run channels accumulate suffix products of x_j; their difference at any
/// position at or past the run's end is exactly x_j^P. The returned
/// position rows hold fill value 1 on both run channels past the run, which
/// freezes the difference all the way to the readout.
pub fn build_power_block(
    j: usize,
    power: u32,
    layout: &MonomialLayout,
) -> Result<(MambaBlockWeights, Matrix)> {
    if power == 0 {
        return Err(Error::InvalidInput {
            reason: "power must be at least 1".into(),
        });
    }
    let run_end = j + power as usize - 1;
    if j == 0 || run_end > layout.padded_len {
        return Err(Error::InvalidInput {
            reason: format!(
                "run of length {power} starting at {j} does not fit in padded length {}",
                layout.padded_len
            ),
        });
    }
    let w = MonomialLayout::WIDTH;
    let mut pe = layout.blank_pe();
    stamp_window(&mut pe, MonomialLayout::RUN_FULL, run_end + 1, layout.padded_len);
    stamp_window(&mut pe, MonomialLayout::RUN_TAIL, run_end + 1, layout.padded_len);
    let gate = routing(
        w,
        &[],
        &[
            (MonomialLayout::RUN_FULL, 1.0),
            (MonomialLayout::RUN_TAIL, 1.0),
        ],
    );
    let out = routing(
        w,
        &[
            (MonomialLayout::OUT, MonomialLayout::RUN_FULL, 1.0),
            (MonomialLayout::OUT, MonomialLayout::RUN_TAIL, -1.0),
        ],
        &[],
    );
    let block = gated_block(
        selective_product_scan(w, MonomialLayout::ONES, &[MonomialLayout::RUN_FULL]),
        gate,
        out,
    );
    Ok((block, pe))
}

/// Compiles c * x_j^P over inputs of length `l` into a three-block stack
/// read out at the padded end.
pub fn construct_monomial_model(spec: &MonomialSpec, l: usize) -> Result<ConstructedStack> {
    spec.validate()?;
    if spec.var_index > l {
        return Err(Error::InvalidInput {
            reason: format!(
                "monomial variable x{} outside the input length {l}",
                spec.var_index
            ),
        });
    }
    let padded = l.max(spec.var_index + spec.power as usize + 2);
    let layout = MonomialLayout::new(l, padded)?;
    let (select, pe1) = build_position_selector(spec.var_index, &layout)?;
    let (duplicate, pe2) = build_duplicator(spec.var_index, spec.power, &layout)?;
    let (power, pe3) = build_power_block(spec.var_index, spec.power, &layout)?;
    let pe = pe1.add(&pe2)?.add(&pe3)?;
    let encoder = layout.encoder(pe)?;
    let mut readout = vec![0.0; MonomialLayout::WIDTH];
    readout[MonomialLayout::OUT] = spec.coeff;
    Ok(ConstructedStack {
        encoder,
        blocks: vec![select, duplicate, power],
        readout,
        readout_position: padded,
        layout: layout.manifest(),
    })
}

/// Channel bookkeeping for one product term of a polynomial target.
struct TermChannels {
    coeff: f64,
    vars: Vec<(usize, u32)>,
    run_start: usize,
    run_end: usize,
    spike_full: usize,
    spike_tail: usize,
    window_full_pe: usize,
    window_tail_pe: usize,
    extra: Vec<(usize, usize)>,
    run_full: usize,
    run_tail: usize,
    pick_pe: usize,
    carry: usize,
}

#[derive(Default)]
struct ChannelAlloc {
    names: Vec<String>,
}

impl ChannelAlloc {
    fn push(&mut self, name: String) -> usize {
        self.names.push(name);
        self.names.len() - 1
    }
}

/// Compiles a sum of product terms plus a constant into a four-block
/// stack. Each term gets its own run in the padded tail: the run carries
/// the term's variables in sequence, the selective scan telescopes the
/// run into the full product at the run's end, a pick mask extracts that
/// one value onto a carry channel, and the final block prefix-sums the
/// carries into the output with the term coefficients.
pub fn construct_polynomial_model(target: &MultiPoly, l: usize) -> Result<ConstructedStack> {
    if l == 0 {
        return Err(Error::InvalidInput {
            reason: "polynomial construction needs a positive input length".into(),
        });
    }
    let mut constant = 0.0;
    let mut product_terms: Vec<(Vec<(usize, u32)>, f64)> = Vec::new();
    for (mono, coeff) in target.terms_graded_lex() {
        if mono.exps().is_empty() {
            constant = coeff;
            continue;
        }
        let vars: Vec<(usize, u32)> = mono
            .exps()
            .iter()
            .map(|&(v, p)| (v as usize, p))
            .collect();
        if let Some(&(v, _)) = vars.iter().find(|&&(v, _)| v > l) {
            return Err(Error::Unsupported {
                reason: format!("target term references x{v} but the input has length {l}"),
            });
        }
        product_terms.push((vars, coeff));
    }

    let mut alloc = ChannelAlloc::default();
    let ones = alloc.push("ones".into());
    let out = alloc.push("out".into());
    let mut var_channels: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (vars, _) in &product_terms {
        for &(v, _) in vars {
            var_channels.entry(v).or_insert((0, 0));
        }
    }
    for (v, slots) in var_channels.iter_mut() {
        let raw = alloc.push(format!("raw[x{v}]"));
        let sel = alloc.push(format!("select_pe[x{v}]"));
        *slots = (raw, sel);
    }

    let mut terms: Vec<TermChannels> = Vec::new();
    let mut next_start = l + 1;
    for (idx, (vars, coeff)) in product_terms.iter().enumerate() {
        let tag = idx + 1;
        let total: usize = vars.iter().map(|&(_, p)| p as usize).sum();
        let run_start = next_start;
        let run_end = run_start + total - 1;
        next_start = run_end + 2;
        let head_var = vars[0].0;
        let spike_full = alloc.push(format!("spike_full[t{tag},x{head_var}]"));
        let spike_tail = alloc.push(format!("spike_tail[t{tag},x{head_var}]"));
        let window_full_pe = alloc.push(format!("window_full_pe[t{tag},x{head_var}]"));
        let window_tail_pe = alloc.push(format!("window_tail_pe[t{tag},x{head_var}]"));
        let mut extra = Vec::new();
        for &(v, _) in &vars[1..] {
            let spike = alloc.push(format!("spike[t{tag},x{v}]"));
            let window = alloc.push(format!("window_pe[t{tag},x{v}]"));
            extra.push((spike, window));
        }
        let run_full = alloc.push(format!("run_full[t{tag}]"));
        let run_tail = alloc.push(format!("run_tail[t{tag}]"));
        let pick_pe = alloc.push(format!("pick_pe[t{tag}]"));
        let carry = alloc.push(format!("carry[t{tag}]"));
        terms.push(TermChannels {
            coeff: *coeff,
            vars: vars.clone(),
            run_start,
            run_end,
            spike_full,
            spike_tail,
            window_full_pe,
            window_tail_pe,
            extra,
            run_full,
            run_tail,
            pick_pe,
            carry,
        });
    }

    let width = alloc.names.len();
    if width > MAX_CHANNELS {
        return Err(Error::Unsupported {
            reason: format!("target needs {width} channels, over the builder budget {MAX_CHANNELS}"),
        });
    }
    let padded = match terms.last() {
        Some(t) => t.run_end + 1,
        None => l,
    };
    if padded > MAX_PADDED_LEN {
        return Err(Error::Unsupported {
            reason: format!(
                "target needs padded length {padded}, over the builder budget {MAX_PADDED_LEN}"
            ),
        });
    }

    let mut pe = Matrix::zeros(padded, width);
    for (v, &(_, sel)) in &var_channels {
        stamp_window(&mut pe, sel, *v, *v);
    }
    for t in &terms {
        let head_power = t.vars[0].1 as usize;
        stamp_window(
            &mut pe,
            t.window_full_pe,
            t.run_start,
            t.run_start + head_power - 1,
        );
        stamp_window(
            &mut pe,
            t.window_tail_pe,
            t.run_start + 1,
            t.run_start + head_power - 1,
        );
        let mut offset = head_power;
        for (slot, &(_, p)) in t.vars[1..].iter().enumerate() {
            let (_, window) = t.extra[slot];
            stamp_window(
                &mut pe,
                window,
                t.run_start + offset,
                t.run_start + offset + p as usize - 1,
            );
            offset += p as usize;
        }
        stamp_window(&mut pe, t.pick_pe, t.run_end, t.run_end);
    }

    let mut select_gate = Vec::new();
    let mut select_out = Vec::new();
    let mut window_gate = Vec::new();
    let mut run_out = Vec::new();
    let mut pick_gate = Vec::new();
    let mut carry_out = Vec::new();
    let mut carry_bias = Vec::new();
    let mut aggregate_out = Vec::new();
    let mut step_sources = Vec::new();
    for (_, &(raw, sel)) in &var_channels {
        select_gate.push((raw, sel, 1.0));
    }
    for t in &terms {
        let head_raw = var_channels[&t.vars[0].0].0;
        select_out.push((t.spike_full, head_raw, 1.0));
        select_out.push((t.spike_tail, head_raw, 1.0));
        window_gate.push((t.spike_full, t.window_full_pe, 1.0));
        window_gate.push((t.spike_tail, t.window_tail_pe, 1.0));
        run_out.push((t.run_full, t.spike_full, 1.0));
        run_out.push((t.run_tail, t.spike_tail, 1.0));
        for (slot, &(v, _)) in t.vars[1..].iter().enumerate() {
            let (spike, window) = t.extra[slot];
            select_out.push((spike, var_channels[&v].0, 1.0));
            window_gate.push((spike, window, 1.0));
            run_out.push((t.run_full, spike, 1.0));
            run_out.push((t.run_tail, spike, 1.0));
        }
        pick_gate.push((t.run_full, t.pick_pe, 1.0));
        pick_gate.push((t.run_tail, t.pick_pe, 1.0));
        carry_out.push((t.carry, t.run_full, 1.0));
        carry_out.push((t.carry, t.run_tail, -1.0));
        carry_bias.push((t.carry, 1.0));
        aggregate_out.push((out, t.carry, t.coeff));
        step_sources.push(t.run_full);
    }

    let blocks = vec![
        gated_block(
            identity_scan(width, ones),
            routing(width, &select_gate, &[]),
            routing(width, &select_out, &[]),
        ),
        gated_block(
            running_sum_scan(width, ones),
            routing(width, &window_gate, &[]),
            routing(width, &run_out, &[]),
        ),
        gated_block(
            selective_product_scan(width, ones, &step_sources),
            routing(width, &pick_gate, &[]),
            routing(width, &carry_out, &[]),
        ),
        gated_block(
            running_sum_scan(width, ones),
            routing(width, &[], &carry_bias),
            routing(width, &aggregate_out, &[]),
        ),
    ];

    let mut w_in = Matrix::zeros(width, 1);
    for &(raw, _) in var_channels.values() {
        w_in.set(raw, 0, 1.0);
    }
    let mut bias = vec![0.0; width];
    bias[ones] = 1.0;
    let encoder = StackEncoder::new(w_in, bias, LearnablePE::new(pe))?;
    let mut readout = vec![0.0; width];
    readout[out] = 1.0;
    readout[ones] = constant;
    Ok(ConstructedStack {
        encoder,
        blocks,
        readout,
        readout_position: padded,
        layout: ChannelLayout {
            width,
            input_len: l,
            padded_len: padded,
            names: alloc.names,
        },
    })
}

/// Numerical certificate of one constructed stack against its target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub target: serde_json::Value,
    pub n_trials: usize,
    #[serde(rename = "box")]
    pub bounds: [f64; 2],
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Evaluates stack and target on uniform draws from the box and reports
/// the worst relative error; the certificate passes at `VERIFY_TOL`.
pub fn verify_construction(
    stack: &ConstructedStack,
    target: &MultiPoly,
    n_trials: usize,
    bounds: (f64, f64),
    seed: u64,
) -> Result<VerifyReport> {
    if n_trials == 0 {
        return Err(Error::InvalidInput {
            reason: "verification needs at least one trial".into(),
        });
    }
    if !(bounds.0.is_finite() && bounds.1.is_finite()) || bounds.0 >= bounds.1 {
        return Err(Error::InvalidInput {
            reason: format!("verification box ({}, {}) is not an interval", bounds.0, bounds.1),
        });
    }
    if target.n_vars() > stack.layout.input_len {
        return Err(Error::InvalidInput {
            reason: format!(
                "target has {} variables but the stack takes length {}",
                target.n_vars(),
                stack.layout.input_len
            ),
        });
    }
    let mut rng = Rng::new(seed);
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..n_trials {
        let x: Vec<f64> = (0..stack.layout.input_len)
            .map(|_| rng.range(bounds.0, bounds.1))
            .collect();
        let got = stack.forward(&x)?;
        let want = target.eval(&x[..target.n_vars()])?;
        let rel = (got - want).abs() / want.abs().max(REL_FLOOR);
        max_rel_err = max_rel_err.max(rel);
    }
    let target_json: serde_json::Value =
        serde_json::from_str(&poly_to_json(target)?).map_err(|e| Error::InvalidInput {
            reason: format!("target serialization failed: {e}"),
        })?;
    Ok(VerifyReport {
        target: target_json,
        n_trials,
        bounds: [bounds.0, bounds.1],
        max_rel_err,
        pass: max_rel_err <= VERIFY_TOL,
    })
}

#[derive(Serialize)]
struct StackReprOut<'a> {
    encoder: &'a StackEncoder,
    blocks: Vec<LayerWeights>,
    readout: &'a [f64],
    readout_position: usize,
    layout: &'a ChannelLayout,
}

#[derive(Deserialize)]
struct StackReprIn {
    encoder: StackEncoder,
    blocks: Vec<LayerWeights>,
    readout: Vec<f64>,
    readout_position: usize,
    layout: ChannelLayout,
}

/// Serializes a stack with each block in the tagged layer format.
pub fn stack_to_json(stack: &ConstructedStack) -> Result<String> {
    let repr = StackReprOut {
        encoder: &stack.encoder,
        blocks: stack
            .blocks
            .iter()
            .map(|b| LayerWeights::MambaBlock {
                weights: Box::new(b.clone()),
            })
            .collect(),
        readout: &stack.readout,
        readout_position: stack.readout_position,
        layout: &stack.layout,
    };
    serde_json::to_string_pretty(&repr)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::InvalidInput {
            reason: format!("stack serialization failed: {e}"),
        })
}

pub fn stack_from_json(text: &str) -> Result<ConstructedStack> {
    let repr: StackReprIn = serde_json::from_str(text).map_err(|e| Error::InvalidInput {
        reason: format!("stack deserialization failed: {e}"),
    })?;
    let mut blocks = Vec::with_capacity(repr.blocks.len());
    for layer in repr.blocks {
        layer.validate()?;
        match layer {
            LayerWeights::MambaBlock { weights } => blocks.push(*weights),
            other => {
                return Err(Error::InvalidInput {
                    reason: format!("stack blocks must be gated blocks, found {other:?}"),
                })
            }
        }
    }
    if repr.readout.len() != repr.layout.width
        || repr.readout_position == 0
        || repr.readout_position > repr.layout.padded_len
    {
        return Err(Error::InvalidInput {
            reason: "stack readout does not match its layout".into(),
        });
    }
    Ok(ConstructedStack {
        encoder: repr.encoder,
        blocks,
        readout: repr.readout,
        readout_position: repr.readout_position,
        layout: repr.layout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::poly_from_terms;

    fn encode_through(
        layout: &MonomialLayout,
        pe: Matrix,
        blocks: &[&MambaBlockWeights],
        x: &[f64],
    ) -> Matrix {
        let encoder = layout.encoder(pe).unwrap();
        let xm = Matrix::from_vec(1, x.len(), x.to_vec()).unwrap();
        let mut u = encoder.encode(&xm).unwrap();
        for b in blocks {
            u = mamba_block_forward(b, &u).unwrap();
        }
        u
    }

    #[test]
    fn position_selector_isolates_the_indexed_value() {
        let layout = MonomialLayout::new(3, 3).unwrap();
        let (block, pe) = build_position_selector(2, &layout).unwrap();
        let u = encode_through(&layout, pe, &[&block], &[3.0, 5.0, 7.0]);
        assert_eq!(u.row(MonomialLayout::SPIKE_FULL), &[0.0, 5.0, 0.0]);
        assert_eq!(u.row(MonomialLayout::SPIKE_TAIL), &[0.0, 5.0, 0.0]);
        assert_eq!(u.row(MonomialLayout::RAW), &[3.0, 5.0, 7.0]);

        let (block, pe) = build_position_selector(1, &layout).unwrap();
        let u = encode_through(&layout, pe, &[&block], &[3.0, 5.0, 7.0]);
        assert_eq!(u.row(MonomialLayout::SPIKE_FULL), &[3.0, 0.0, 0.0]);

        let (block, pe) = build_position_selector(2, &layout).unwrap();
        let u = encode_through(&layout, pe, &[&block], &[0.0, 0.0, 0.0]);
        assert_eq!(u.row(MonomialLayout::SPIKE_FULL), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn position_selector_rejects_positions_outside_the_input() {
        let layout = MonomialLayout::new(3, 5).unwrap();
        assert!(build_position_selector(0, &layout).is_err());
        assert!(build_position_selector(4, &layout).is_err());
    }

    #[test]
    fn duplicator_spreads_a_spike_into_a_run() {
        let layout = MonomialLayout::new(2, 6).unwrap();
        let (select, pe1) = build_position_selector(2, &layout).unwrap();
        let (duplicate, pe2) = build_duplicator(2, 3, &layout).unwrap();
        let pe = pe1.add(&pe2).unwrap();
        let u = encode_through(&layout, pe, &[&select, &duplicate], &[0.0, 5.0]);
        assert_eq!(
            u.row(MonomialLayout::RUN_FULL),
            &[0.0, 5.0, 5.0, 5.0, 0.0, 0.0]
        );
        assert_eq!(
            u.row(MonomialLayout::RUN_TAIL),
            &[0.0, 0.0, 5.0, 5.0, 0.0, 0.0]
        );
    }

    #[test]
    fn duplicator_with_one_copy_keeps_the_spike() {
        let layout = MonomialLayout::new(2, 6).unwrap();
        let (select, pe1) = build_position_selector(2, &layout).unwrap();
        let (duplicate, pe2) = build_duplicator(2, 1, &layout).unwrap();
        let pe = pe1.add(&pe2).unwrap();
        let u = encode_through(&layout, pe, &[&select, &duplicate], &[0.0, 5.0]);
        assert_eq!(
            u.row(MonomialLayout::RUN_FULL),
            &[0.0, 5.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(u.row(MonomialLayout::RUN_TAIL), &[0.0; 6]);
    }

    #[test]
    fn duplicator_of_a_zero_spike_is_all_fill() {
        let layout = MonomialLayout::new(2, 6).unwrap();
        let (select, pe1) = build_position_selector(2, &layout).unwrap();
        let (duplicate, pe2) = build_duplicator(2, 3, &layout).unwrap();
        let pe = pe1.add(&pe2).unwrap();
        let u = encode_through(&layout, pe, &[&select, &duplicate], &[0.0, 0.0]);
        assert_eq!(u.row(MonomialLayout::RUN_FULL), &[0.0; 6]);
    }

    #[test]
    fn duplicator_rejects_runs_past_the_padding() {
        let layout = MonomialLayout::new(2, 4).unwrap();
        let err = build_duplicator(2, 3, &layout).unwrap_err();
        assert!(err.to_string().contains("padded length"));
    }

    #[test]
    fn power_block_telescopes_exact_powers() {
        let layout = MonomialLayout::new(2, 7).unwrap();
        let (select, pe1) = build_position_selector(2, &layout).unwrap();
        let (duplicate, pe2) = build_duplicator(2, 3, &layout).unwrap();
        let (power, pe3) = build_power_block(2, 3, &layout).unwrap();
        let pe = pe1.add(&pe2).unwrap().add(&pe3).unwrap();

        for (xj, want) in [(0.5, 0.125), (1.0, 1.0), (0.0, 0.0)] {
            let u = encode_through(
                &layout,
                pe.clone(),
                &[&select, &duplicate, &power],
                &[1.0, xj],
            );
            let got = u.get(MonomialLayout::OUT, 6);
            assert!(
                (got - want).abs() < 1e-15,
                "x_j = {xj}: expected {want}, got {got}"
            );
        }
    }

    #[test]
    fn power_block_rejects_runs_that_do_not_fit() {
        let layout = MonomialLayout::new(2, 3).unwrap();
        let err = build_power_block(2, 3, &layout).unwrap_err();
        assert!(err.to_string().contains("does not fit"));
    }

    #[test]
    fn monomial_model_matches_hand_oracles() {
        // 2 * x_2^3 on x_2 = 0.5 is 0.25.
        let stack =
            construct_monomial_model(&MonomialSpec::new(2, 3, 2.0).unwrap(), 6).unwrap();
        let y = stack
            .forward(&[1.0, 0.5, 0.3, 0.7, 1.1, 0.9])
            .unwrap();
        assert!((y - 0.25).abs() < 1e-12, "got {y}");

        // Degenerate power: pure selection of x_1.
        let stack =
            construct_monomial_model(&MonomialSpec::new(1, 1, 1.0).unwrap(), 4).unwrap();
        let y = stack.forward(&[0.37, 2.0, 3.0, 4.0]).unwrap();
        assert!((y - 0.37).abs() < 1e-12, "got {y}");

        // -1 * x_3^2 on x_3 = 2 is -4.
        let stack =
            construct_monomial_model(&MonomialSpec::new(3, 2, -1.0).unwrap(), 6).unwrap();
        let y = stack.forward(&[1.0, 1.0, 2.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((y + 4.0).abs() < 1e-12, "got {y}");
    }

    #[test]
    fn monomial_model_pads_past_short_inputs() {
        // P > L forces the run into the padded region.
        let spec = MonomialSpec::new(2, 5, 1.0).unwrap();
        let stack = construct_monomial_model(&spec, 3).unwrap();
        assert_eq!(stack.layout.padded_len, 2 + 5 + 2);
        assert_eq!(stack.readout_position, stack.layout.padded_len);
        assert!(stack.readout_position > spec.var_index + spec.power as usize);
        let y = stack.forward(&[1.0, 0.8, 1.0]).unwrap();
        assert!((y - 0.8f64.powi(5)).abs() < 1e-12, "got {y}");
    }

    #[test]
    fn monomial_certificates_pass_on_a_grid_slice() {
        for &j in &[1usize, 3, 5] {
            for &p in &[1u32, 4, 6] {
                for &c in &[-2.0, 1.0, 0.5] {
                    let spec = MonomialSpec::new(j, p, c).unwrap();
                    let stack = construct_monomial_model(&spec, 8).unwrap();
                    let report = verify_construction(
                        &stack,
                        &spec.target_poly(8),
                        30,
                        (0.5, 1.5),
                        2026 + j as u64 * 100 + p as u64,
                    )
                    .unwrap();
                    assert!(
                        report.pass,
                        "j={j} P={p} c={c}: max_rel_err = {}",
                        report.max_rel_err
                    );
                }
            }
        }
    }

    #[test]
    fn perturbed_stack_fails_verification() {
        let spec = MonomialSpec::new(2, 3, 1.0).unwrap();
        let mut stack = construct_monomial_model(&spec, 6).unwrap();
        let w = &mut stack.blocks[2].linear_out.w;
        let v = w.get(MonomialLayout::OUT, MonomialLayout::RUN_FULL);
        w.set(MonomialLayout::OUT, MonomialLayout::RUN_FULL, v + 0.1);
        let report =
            verify_construction(&stack, &spec.target_poly(6), 30, (0.5, 1.5), 7).unwrap();
        assert!(!report.pass);
        assert!(report.max_rel_err > VERIFY_TOL);
    }

    #[test]
    fn polynomial_model_multiplies_two_variables() {
        // 2 * x_1 * x_2 over inputs of length 2.
        let target = poly_from_terms(2, &[(&[(1, 1), (2, 1)], 2.0)]);
        let stack = construct_polynomial_model(&target, 2).unwrap();
        let mut rng = Rng::new(11);
        for _ in 0..100 {
            let x = [rng.range(0.1, 2.0), rng.range(0.1, 2.0)];
            let got = stack.forward(&x).unwrap();
            let want = 2.0 * x[0] * x[1];
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "x = {x:?}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn polynomial_model_sums_independent_powers() {
        let target = poly_from_terms(3, &[(&[(1, 2)], 1.0), (&[(2, 3)], 1.0)]);
        let stack = construct_polynomial_model(&target, 3).unwrap();
        let report = verify_construction(&stack, &target, 200, (0.1, 2.0), 5).unwrap();
        assert!(report.pass, "max_rel_err = {}", report.max_rel_err);
        assert!(report.max_rel_err <= 1e-5);
    }

    #[test]
    fn polynomial_model_carries_pure_constants() {
        let target = MultiPoly::constant(3.5, 4);
        let stack = construct_polynomial_model(&target, 4).unwrap();
        let y = stack.forward(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(y, 3.5);

        let zero = MultiPoly::zero(4);
        let stack = construct_polynomial_model(&zero, 4).unwrap();
        let y = stack.forward(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(y, 0.0);
        let report = verify_construction(&stack, &zero, 10, (0.1, 2.0), 3).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn polynomial_model_rejects_variables_beyond_the_input() {
        let target = poly_from_terms(7, &[(&[(7, 1)], 1.0)]);
        let err = construct_polynomial_model(&target, 5).unwrap_err();
        assert!(matches!(err, Error::Unsupported { .. }), "{err}");
    }

    #[test]
    fn polynomial_model_matches_independent_monomial_products() {
        // Each term of the stack equals the product of standalone
        // single-variable constructions, so the whole model must match
        // their coefficient-weighted sum.
        let target = poly_from_terms(
            3,
            &[
                (&[(1, 1), (2, 1)], 2.0),
                (&[(3, 3)], 0.5),
                (&[(2, 2)], -1.0),
            ],
        );
        let stack = construct_polynomial_model(&target, 3).unwrap();
        let x1 = construct_monomial_model(&MonomialSpec::new(1, 1, 1.0).unwrap(), 3).unwrap();
        let x2 = construct_monomial_model(&MonomialSpec::new(2, 1, 1.0).unwrap(), 3).unwrap();
        let x2sq = construct_monomial_model(&MonomialSpec::new(2, 2, 1.0).unwrap(), 3).unwrap();
        let x3cube = construct_monomial_model(&MonomialSpec::new(3, 3, 1.0).unwrap(), 3).unwrap();
        let mut rng = Rng::new(19);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.range(0.5, 1.5)).collect();
            let whole = stack.forward(&x).unwrap();
            let composed = 2.0 * x1.forward(&x).unwrap() * x2.forward(&x).unwrap()
                + 0.5 * x3cube.forward(&x).unwrap()
                - x2sq.forward(&x).unwrap();
            assert!(
                (whole - composed).abs() <= 1e-9 * composed.abs().max(1.0),
                "x = {x:?}: stack {whole}, composed {composed}"
            );
        }
    }

    #[test]
    fn stack_json_round_trips_exactly() {
        let spec = MonomialSpec::new(2, 3, 2.0).unwrap();
        let stack = construct_monomial_model(&spec, 6).unwrap();
        let text = stack_to_json(&stack).unwrap();
        assert!(text.contains("mamba_block"));
        assert!(text.contains("run_full"));
        let back = stack_from_json(&text).unwrap();
        assert_eq!(back.readout_position, stack.readout_position);
        assert_eq!(back.layout, stack.layout);
        let x = [1.0, 0.5, 0.3, 0.7, 1.1, 0.9];
        assert_eq!(
            stack.forward(&x).unwrap().to_bits(),
            back.forward(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn verify_report_serializes_the_certificate() {
        let spec = MonomialSpec::new(1, 2, 1.0).unwrap();
        let stack = construct_monomial_model(&spec, 4).unwrap();
        let report =
            verify_construction(&stack, &spec.target_poly(4), 20, (0.5, 1.5), 1).unwrap();
        let text = serde_json::to_string_pretty(&report).unwrap();
        for field in ["target", "n_trials", "box", "max_rel_err", "pass"] {
            assert!(text.contains(field), "missing {field} in {text}");
        }
        assert!(report.pass);
    }
}
