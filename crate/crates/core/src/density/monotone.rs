//! Strictly monotone scalar network used as an unnormalized CDF.
//!
//! Hidden layers compute `a_l = sigmoid(h(W_l) a_{l-1} + b_l)` with `a_0 = t`
//! and a strictly positive map `h` applied to every raw weight. The output is
//! `F(t) = softmax(w)^T a_L`, a convex combination of increasing sigmoids, so
//! `F` maps into `(0, 1)` and is strictly increasing. Normalizing on the
//! support gives the CDF `P(t) = (F(t) - F(A)) / (F(B) - F(A))` whose
//! derivative is the conditional density.
//!
//! Every pass carries the pair `(a_l, da_l/dt)`; the reverse sweep propagates
//! adjoints for both, which yields exact parameter gradients of
//! `log dF/dt`.

use crate::data::Support;
use crate::error::{Result, VsdeError};
use crate::numerics::{dot, sigmoid, sigmoid_slope, softmax_into, softplus};
use crate::scalar::Scalar;

/// Map from raw weights to strictly positive effective weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PositivityTransform {
    #[default]
    Softplus,
    Exp,
}

impl PositivityTransform {
    pub fn name(self) -> &'static str {
        match self {
            PositivityTransform::Softplus => "softplus",
            PositivityTransform::Exp => "exp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(PositivityTransform::Softplus),
            "exp" => Ok(PositivityTransform::Exp),
            other => Err(VsdeError::Config(format!("unknown positivity transform `{other}`"))),
        }
    }

    /// Effective weight and its derivative with respect to the raw value.
    #[inline]
    fn apply<T: Scalar>(self, raw: T) -> (T, T) {
        match self {
            PositivityTransform::Softplus => (softplus(raw), sigmoid(raw)),
            PositivityTransform::Exp => {
                let e = raw.exp().max(T::min_positive_value());
                (e, e)
            }
        }
    }

    /// Raw value that maps to `w > 0`.
    pub fn inverse<T: Scalar>(self, w: T) -> T {
        match self {
            PositivityTransform::Softplus => crate::numerics::softplus_inverse(w),
            PositivityTransform::Exp => w.ln(),
        }
    }
}

/// Positive weight map used by the default configuration (softplus).
pub fn positive_transform<T: Scalar>(raw: T) -> T {
    softplus(raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnnConfig<T> {
    pub hidden: Vec<usize>,
    pub support: Support<T>,
    pub transform: PositivityTransform,
}

impl<T: Scalar> Default for PnnConfig<T> {
    fn default() -> Self {
        PnnConfig {
            hidden: vec![16, 16],
            support: Support::default(),
            transform: PositivityTransform::Softplus,
        }
    }
}

impl<T: Scalar> PnnConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(VsdeError::Config(format!(
                "monotone network needs at least one hidden layer of positive width, got {:?}",
                self.hidden
            )));
        }
        Support::new(self.support.low, self.support.high)?;
        Ok(())
    }

    pub fn layout(&self) -> MonotoneLayout {
        MonotoneLayout::new(&self.hidden)
    }
}

/// Flat parameter layout: for each hidden layer, weights (row-major,
/// `out x in`) then biases; last, the output weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonotoneLayout {
    widths: Vec<usize>,
    weight_offsets: Vec<usize>,
    bias_offsets: Vec<usize>,
    final_offset: usize,
    n_params: usize,
}

impl MonotoneLayout {
    pub fn new(hidden: &[usize]) -> Self {
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        let mut off = 0;
        let mut weight_offsets = Vec::new();
        let mut bias_offsets = Vec::new();
        for l in 1..widths.len() {
            weight_offsets.push(off);
            off += widths[l] * widths[l - 1];
            bias_offsets.push(off);
            off += widths[l];
        }
        let final_offset = off;
        off += *widths.last().unwrap();
        MonotoneLayout {
            widths,
            weight_offsets,
            bias_offsets,
            final_offset,
            n_params: off,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Width of activation `l`; `width(0) == 1` is the scalar input.
    pub fn width(&self, l: usize) -> usize {
        self.widths[l]
    }

    /// Range of the raw weight matrix of hidden layer `l` (1-based).
    pub fn weights(&self, l: usize) -> std::ops::Range<usize> {
        let s = self.weight_offsets[l - 1];
        s..s + self.widths[l] * self.widths[l - 1]
    }

    pub fn biases(&self, l: usize) -> std::ops::Range<usize> {
        let s = self.bias_offsets[l - 1];
        s..s + self.widths[l]
    }

    pub fn output(&self) -> std::ops::Range<usize> {
        self.final_offset..self.n_params
    }
}

/// Raw (pre-positivity) parameters of one monotone network plus its support.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneNetParams<T> {
    pub config: PnnConfig<T>,
    pub raw: Vec<T>,
}

impl<T: Scalar> MonotoneNetParams<T> {
    pub fn new(config: PnnConfig<T>, raw: Vec<T>) -> Result<Self> {
        config.validate()?;
        let n = config.layout().n_params();
        if raw.len() != n {
            return Err(VsdeError::Shape(format!(
                "monotone network expects {n} parameters, got {}",
                raw.len()
            )));
        }
        Ok(MonotoneNetParams { config, raw })
    }

    pub fn support(&self) -> Support<T> {
        self.config.support
    }
}

/// `F(t)` and `dF/dt` of the unnormalized network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotoneOutput<T> {
    pub value: T,
    pub slope: T,
}

pub fn monotone_forward<T: Scalar>(p: &MonotoneNetParams<T>, t: T) -> Result<MonotoneOutput<T>> {
    check_in_support(p.support(), t)?;
    let net = EffectiveNet::new(&p.config, &p.raw);
    let trace = net.forward(t);
    Ok(MonotoneOutput {
        value: trace.value,
        slope: trace.slope,
    })
}

/// Normalized CDF `P(t)`; exactly 0 at `A` and 1 at `B`.
pub fn normalized_cdf<T: Scalar>(p: &MonotoneNetParams<T>, t: T) -> Result<T> {
    check_in_support(p.support(), t)?;
    let net = EffectiveNet::new(&p.config, &p.raw);
    let lo = net.forward(p.support().low).value;
    let hi = net.forward(p.support().high).value;
    let mass = normalizing_mass(lo, hi)?;
    Ok((net.forward(t).value - lo) / mass)
}

/// `log dP/dt = log dF/dt - log(F(B) - F(A))`.
pub fn conditional_log_density<T: Scalar>(p: &MonotoneNetParams<T>, t: T) -> Result<T> {
    check_in_support(p.support(), t)?;
    let net = EffectiveNet::new(&p.config, &p.raw);
    net.log_density(t)
}

fn check_in_support<T: Scalar>(support: Support<T>, t: T) -> Result<()> {
    if support.contains(t) {
        Ok(())
    } else {
        Err(VsdeError::Domain(format!(
            "input {t} outside the support [{}, {}]",
            support.low, support.high
        )))
    }
}

fn normalizing_mass<T: Scalar>(lo: T, hi: T) -> Result<T> {
    let mass = hi - lo;
    let floor = T::lit(1e-300).max(T::min_positive_value());
    if mass < floor || !mass.is_finite() {
        return Err(VsdeError::DegenerateNetwork { mass: mass.as_f64() });
    }
    Ok(mass)
}

/// Positive weights, their raw-space derivatives and the output mixture for
/// one parameter vector.
pub(crate) struct EffectiveNet<'a, T> {
    layout: MonotoneLayout,
    support: Support<T>,
    raw: &'a [T],
    weights: Vec<T>,
    weight_grads: Vec<T>,
    mixture: Vec<T>,
}

struct Trace<T> {
    // index 0 is the input; index l is hidden layer l
    a: Vec<Vec<T>>,
    da: Vec<Vec<T>>,
    slope: Vec<Vec<T>>,
    dz: Vec<Vec<T>>,
    value: T,
    slope_out: T,
}

pub(crate) struct ForwardResult<T> {
    pub value: T,
    pub slope: T,
}

impl<'a, T: Scalar> EffectiveNet<'a, T> {
    pub(crate) fn new(config: &PnnConfig<T>, raw: &'a [T]) -> Self {
        let layout = config.layout();
        debug_assert_eq!(raw.len(), layout.n_params());
        let mut weights = raw.to_vec();
        let mut weight_grads = vec![T::zero(); raw.len()];
        for l in 1..=layout.n_layers() {
            for i in layout.weights(l) {
                let (w, g) = config.transform.apply(raw[i]);
                weights[i] = w;
                weight_grads[i] = g;
            }
        }
        let out = layout.output();
        let mut mixture = vec![T::zero(); out.len()];
        softmax_into(&raw[out], &mut mixture);
        EffectiveNet {
            layout,
            support: config.support,
            raw,
            weights,
            weight_grads,
            mixture,
        }
    }

    fn trace(&self, t: T) -> Trace<T> {
        let lay = &self.layout;
        let n = lay.n_layers();
        let mut a = Vec::with_capacity(n + 1);
        let mut da = Vec::with_capacity(n + 1);
        let mut slope = Vec::with_capacity(n + 1);
        let mut dz = Vec::with_capacity(n + 1);
        a.push(vec![t]);
        da.push(vec![T::one()]);
        slope.push(Vec::new());
        dz.push(Vec::new());
        for l in 1..=n {
            let (win, wout) = (lay.width(l - 1), lay.width(l));
            let w = &self.weights[lay.weights(l)];
            let b = &self.raw[lay.biases(l)];
            let mut al = vec![T::zero(); wout];
            let mut dal = vec![T::zero(); wout];
            let mut sl = vec![T::zero(); wout];
            let mut dzl = vec![T::zero(); wout];
            let (prev, dprev) = (&a[l - 1], &da[l - 1]);
            for j in 0..wout {
                let row = &w[j * win..(j + 1) * win];
                let mut z = b[j];
                let mut d = T::zero();
                for k in 0..win {
                    z += row[k] * prev[k];
                    d += row[k] * dprev[k];
                }
                let s = sigmoid_slope(z);
                al[j] = sigmoid(z);
                sl[j] = s;
                dzl[j] = d;
                dal[j] = s * d;
            }
            a.push(al);
            da.push(dal);
            slope.push(sl);
            dz.push(dzl);
        }
        let value = dot(&self.mixture, &a[n]);
        let slope_out = dot(&self.mixture, &da[n]);
        Trace {
            a,
            da,
            slope,
            dz,
            value,
            slope_out,
        }
    }

    pub(crate) fn forward(&self, t: T) -> ForwardResult<T> {
        let tr = self.trace(t);
        ForwardResult {
            value: tr.value,
            slope: tr.slope_out,
        }
    }

    pub(crate) fn log_density(&self, t: T) -> Result<T> {
        let lo = self.forward(self.support.low).value;
        let hi = self.forward(self.support.high).value;
        let mass = normalizing_mass(lo, hi)?;
        let slope = self.forward(t).slope;
        Ok(slope.ln() - mass.ln())
    }

    /// Log-density at `t`; adds `scale * d(log-density)/d(raw)` into `grad`.
    pub(crate) fn log_density_grad(&self, t: T, scale: T, grad: &mut [T]) -> Result<T> {
        let at = self.trace(t);
        let lo = self.trace(self.support.low);
        let hi = self.trace(self.support.high);
        let mass = normalizing_mass(lo.value, hi.value)?;
        let value = at.slope_out.ln() - mass.ln();

        // adjoints with respect to effective weights, biases and mixture
        let mut g_eff = vec![T::zero(); self.layout.n_params()];
        let mut g_mix = vec![T::zero(); self.mixture.len()];
        self.backward(&at, T::zero(), scale / at.slope_out, &mut g_eff, &mut g_mix);
        self.backward(&hi, -scale / mass, T::zero(), &mut g_eff, &mut g_mix);
        self.backward(&lo, scale / mass, T::zero(), &mut g_eff, &mut g_mix);

        let lay = &self.layout;
        for l in 1..=lay.n_layers() {
            for i in lay.weights(l) {
                grad[i] += g_eff[i] * self.weight_grads[i];
            }
            for i in lay.biases(l) {
                grad[i] += g_eff[i];
            }
        }
        let inner = dot(&self.mixture, &g_mix);
        for (k, i) in lay.output().enumerate() {
            grad[i] += self.mixture[k] * (g_mix[k] - inner);
        }
        Ok(value)
    }

    /// Reverse sweep seeded with adjoints for `F` and `dF/dt`.
    fn backward(&self, tr: &Trace<T>, seed_value: T, seed_slope: T, g_eff: &mut [T], g_mix: &mut [T]) {
        let lay = &self.layout;
        let n = lay.n_layers();
        for k in 0..g_mix.len() {
            g_mix[k] += seed_value * tr.a[n][k] + seed_slope * tr.da[n][k];
        }
        let mut bar_a: Vec<T> = self.mixture.iter().map(|&c| seed_value * c).collect();
        let mut bar_da: Vec<T> = self.mixture.iter().map(|&c| seed_slope * c).collect();
        for l in (1..=n).rev() {
            let (win, wout) = (lay.width(l - 1), lay.width(l));
            let mut bar_z = vec![T::zero(); wout];
            let mut bar_dz = vec![T::zero(); wout];
            for j in 0..wout {
                let s = tr.slope[l][j];
                bar_dz[j] = bar_da[j] * s;
                let bar_s = bar_da[j] * tr.dz[l][j];
                // d sigma'(z)/dz = sigma'(z) (1 - 2 sigma(z))
                bar_z[j] = s * (bar_a[j] + bar_s * (T::one() - (tr.a[l][j] + tr.a[l][j])));
            }
            let w_range = lay.weights(l);
            let w = &self.weights[w_range.clone()];
            let gw = &mut g_eff[w_range];
            let (prev, dprev) = (&tr.a[l - 1], &tr.da[l - 1]);
            for j in 0..wout {
                let row = &mut gw[j * win..(j + 1) * win];
                for k in 0..win {
                    row[k] += bar_z[j] * prev[k] + bar_dz[j] * dprev[k];
                }
            }
            for (g, &bz) in g_eff[lay.biases(l)].iter_mut().zip(&bar_z) {
                *g += bz;
            }
            if l > 1 {
                let mut next_a = vec![T::zero(); win];
                let mut next_da = vec![T::zero(); win];
                for j in 0..wout {
                    let row = &w[j * win..(j + 1) * win];
                    for k in 0..win {
                        next_a[k] += row[k] * bar_z[j];
                        next_da[k] += row[k] * bar_dz[j];
                    }
                }
                bar_a = next_a;
                bar_da = next_da;
            }
        }
    }
}
