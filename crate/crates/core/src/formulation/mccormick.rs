use super::{BilinearTerm, FormulationError, ProblemInstance, RowLabel, Variant};

/// Box of one product term: flow in `[m_lo, m_hi]`, temperature in `[tau_lo, tau_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermBox {
    pub m_lo: f64,
    pub m_hi: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
}

impl TermBox {
    pub fn is_empty(&self) -> bool {
        !(self.m_lo <= self.m_hi && self.tau_lo <= self.tau_hi)
    }
}

/// Physical boxes read from the instance's variable bounds.
pub fn default_boxes(instance: &ProblemInstance) -> Vec<TermBox> {
    let (lo, hi) = (&instance.qp.lo, &instance.qp.hi);
    instance
        .bilinear
        .iter()
        .map(|t| TermBox { m_lo: lo[t.flow], m_hi: hi[t.flow], tau_lo: lo[t.temp], tau_hi: hi[t.temp] })
        .collect()
}

/// One inequality `a·x <= b`: row tag, sparse coefficients, right-hand side.
pub type EnvelopeRow = (&'static str, Vec<(usize, f64)>, f64);

/// The four envelope inequalities `a·x <= b` of `H = c·m·τ̃` over `bx`, in
/// the order: two under-estimators, then two over-estimators.
pub fn envelope_rows(term: &BilinearTerm, bx: &TermBox) -> [EnvelopeRow; 4] {
    let c = term.coef;
    let (h, m, t) = (term.product, term.flow, term.temp);
    let TermBox { m_lo, m_hi, tau_lo, tau_hi } = *bx;
    [
        ("16b", vec![(t, c * m_lo), (m, c * tau_lo), (h, -1.0)], c * m_lo * tau_lo),
        ("16c", vec![(t, c * m_hi), (m, c * tau_hi), (h, -1.0)], c * m_hi * tau_hi),
        ("16d", vec![(h, 1.0), (t, -c * m_hi), (m, -c * tau_lo)], -c * m_hi * tau_lo),
        ("16e", vec![(h, 1.0), (t, -c * m_lo), (m, -c * tau_hi)], -c * m_lo * tau_hi),
    ]
}

/// Replaces every product term of a reformulated instance by its envelope.
pub fn apply_mccormick(instance: &ProblemInstance, boxes: &[TermBox]) -> Result<ProblemInstance, FormulationError> {
    if instance.variant != Variant::Reformulated {
        return Err(FormulationError::UnsupportedVariant(instance.variant));
    }
    let mut out = relax_clean(instance, boxes)?;
    out.variant = Variant::McCormick;
    Ok(out)
}

/// Envelope relaxation of any instance with product terms. A term whose box
/// is a point in either factor becomes the exact linear row `H = c·m·τ̃`
/// with the term's own tag. The variant and the term list are kept so
/// callers can still measure violations.
pub(crate) fn relax(instance: &ProblemInstance, boxes: &[TermBox]) -> Result<ProblemInstance, FormulationError> {
    assert_eq!(boxes.len(), instance.bilinear.len(), "one box per product term");
    let mut out = instance.clone();
    for (term, bx) in instance.bilinear.iter().zip(boxes) {
        if bx.is_empty() {
            return Err(FormulationError::EmptyBox(format!("{}[{},{}]", term.tag, term.pipe, term.hour)));
        }
        let qp = &mut out.qp;
        qp.lo[term.flow] = qp.lo[term.flow].max(bx.m_lo);
        qp.hi[term.flow] = qp.hi[term.flow].min(bx.m_hi);
        qp.lo[term.temp] = qp.lo[term.temp].max(bx.tau_lo);
        qp.hi[term.temp] = qp.hi[term.temp].min(bx.tau_hi);
        let c = term.coef;
        if bx.tau_lo == bx.tau_hi || bx.m_lo == bx.m_hi {
            // A point factor makes the envelope the product itself; two of the
            // four rows would be opposite copies of one hyperplane.
            let row = if bx.tau_lo == bx.tau_hi {
                vec![(term.product, 1.0), (term.flow, -c * bx.tau_lo)]
            } else {
                vec![(term.product, 1.0), (term.temp, -c * bx.m_lo)]
            };
            qp.a_eq.push_row(row);
            qp.b_eq.push(0.0);
            out.eq_labels.push(RowLabel::new(term.tag, &term.pipe, term.hour));
            continue;
        }
        for (tag, row, b) in envelope_rows(term, bx) {
            qp.a_in.push_row(row);
            qp.b_in.push(b);
            out.in_labels.push(RowLabel::new(tag, &term.pipe, term.hour));
        }
    }
    for j in 0..out.n() {
        if out.qp.lo[j] > out.qp.hi[j] {
            return Err(FormulationError::EmptyBox(out.vars.key(j).name()));
        }
    }
    Ok(out)
}

/// Envelope relaxation that drops the term list, as for the McCormick variant.
pub(crate) fn relax_clean(instance: &ProblemInstance, boxes: &[TermBox]) -> Result<ProblemInstance, FormulationError> {
    let mut out = relax(instance, boxes)?;
    out.bilinear.clear();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term() -> BilinearTerm {
        BilinearTerm { product: 0, flow: 1, temp: 2, coef: 1.0, pipe: "p".into(), hour: 1, tag: "11f" }
    }

    /// Interval of H allowed by the four rows at fixed (m, τ̃).
    fn h_range(bx: &TermBox, m: f64, tau: f64) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (_, row, b) in envelope_rows(&term(), bx) {
            let mut h_coef = 0.0;
            let mut rest = 0.0;
            for (c, v) in row {
                match c {
                    0 => h_coef += v,
                    1 => rest += v * m,
                    _ => rest += v * tau,
                }
            }
            let bound = (b - rest) / h_coef;
            if h_coef > 0.0 {
                hi = hi.min(bound);
            } else {
                lo = lo.max(bound);
            }
        }
        (lo, hi)
    }

    #[test]
    fn interior_point_interval() {
        let bx = TermBox { m_lo: 1.0, m_hi: 2.0, tau_lo: 10.0, tau_hi: 20.0 };
        let (lo, hi) = h_range(&bx, 1.5, 15.0);
        assert!((lo - 20.0).abs() < 1e-12 && (hi - 25.0).abs() < 1e-12);
        assert!(lo <= 22.5 && 22.5 <= hi);
    }

    #[test]
    fn point_flow_box_is_exact() {
        let bx = TermBox { m_lo: 1.0, m_hi: 1.0, tau_lo: 10.0, tau_hi: 20.0 };
        for tau in [10.0, 13.7, 20.0] {
            let (lo, hi) = h_range(&bx, 1.0, tau);
            assert!((lo - tau).abs() < 1e-12 && (hi - tau).abs() < 1e-12);
        }
    }

    #[test]
    fn tight_at_corner() {
        let bx = TermBox { m_lo: 1.0, m_hi: 2.0, tau_lo: 10.0, tau_hi: 20.0 };
        let (lo, hi) = h_range(&bx, 1.0, 10.0);
        assert!((lo - 10.0).abs() < 1e-12 && (hi - 10.0).abs() < 1e-12);
    }

    #[test]
    fn empty_box_rejected() {
        assert!(TermBox { m_lo: 2.0, m_hi: 1.0, tau_lo: 0.0, tau_hi: 1.0 }.is_empty());
    }
}
