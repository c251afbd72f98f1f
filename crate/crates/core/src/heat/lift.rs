//! ℍ¹ × ℍ¹ lift: X1, X2 on x, Ẑ1 = ∂z1 + z2∂z3, Ẑ2 = ∂z2 − z1∂z3 on z and
//! the coupled field Ẑ3 + εY3. The x-marginal of its kernel is the ℍ¹
//! ε-kernel.

use std::sync::Arc;

use super::{heat_mc, KernelField, McOptions};
use crate::error::{LabError, Result};
use crate::frames::{make_eps_frame, EpsFrame, Frame, Origin, VectorFieldSpec};
use crate::geodesy::{dist_control, ControlOptions};
use crate::lattice::Lattice;

/// The five lifted fields as a frame on ℝ⁶ (all of degree one).
pub fn lifted_h1_frame(eps: f64) -> Result<Frame> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(LabError::InvalidParameter("lift needs ε in (0, 1]".into()));
    }
    let f = |g: fn(&[f64], &mut [f64], f64), e: f64| -> crate::frames::FieldFn {
        Arc::new(move |x: &[f64], o: &mut [f64]| {
            o.iter_mut().for_each(|v| *v = 0.0);
            g(x, o, e)
        })
    };
    let fields = vec![
        f(|x, o, _| {
            o[0] = 1.0;
            o[2] = -x[1];
        }, eps),
        f(|x, o, _| {
            o[1] = 1.0;
            o[2] = x[0];
        }, eps),
        f(|x, o, _| {
            o[3] = 1.0;
            o[5] = x[4];
        }, eps),
        f(|x, o, _| {
            o[4] = 1.0;
            o[5] = -x[3];
        }, eps),
        f(|_, o, e| {
            o[5] = 1.0;
            o[2] = 2.0 * e;
        }, eps),
    ];
    Ok(Frame {
        name: format!("h1_lift_eps{eps}"),
        m: 5,
        step: 1,
        degrees: vec![1; 5],
        origins: (0..5).map(Origin::Generator).collect(),
        spec: VectorFieldSpec { ambient_dim: 6, fields, closed_form_brackets: None },
        lower: vec![-10.0; 6],
        upper: vec![10.0; 6],
        periodic: vec![false; 6],
        smooth: true,
    })
}

fn lifted_eps_frame(eps: f64) -> Result<EpsFrame> {
    make_eps_frame(Arc::new(lifted_h1_frame(eps)?), eps)
}

/// Monte-Carlo kernel of the lifted operator on a six-dimensional lattice.
pub fn lift_h1_kernel(eps: f64, lat6: &Lattice, y6: &[f64], t: f64, opts: &McOptions) -> Result<KernelField> {
    if lat6.dim() != 6 {
        return Err(LabError::InvalidParameter("lifted lattice must be six-dimensional".into()));
    }
    heat_mc(&lifted_eps_frame(eps)?, lat6, y6, t, opts)
}

/// Integrates out the z-block: the marginal lives on the x-part of the lattice.
pub fn marginalize(k6: &KernelField) -> Result<KernelField> {
    let l = &k6.lat;
    if l.dim() != 6 {
        return Err(LabError::InvalidParameter("marginalize expects a six-dimensional kernel".into()));
    }
    let lat3 = Lattice::from_parts(l.lower[..3].to_vec(), l.spacing[..3].to_vec(), l.counts[..3].to_vec(), l.periodic[..3].to_vec())?;
    let zcell: f64 = l.spacing[3..].iter().product();
    let inner: usize = l.counts[3..].iter().product();
    let values: Vec<Vec<f64>> = k6
        .values
        .iter()
        .map(|v| (0..lat3.len()).map(|i| v[i * inner..(i + 1) * inner].iter().sum::<f64>() * zcell).collect())
        .collect();
    let cv = lat3.cell_volume();
    let mass = values.iter().map(|v| v.iter().sum::<f64>() * cv).collect();
    Ok(KernelField { lat: lat3, source: k6.source[..3].to_vec(), times: k6.times.clone(), values, mass, method: k6.method, dt: k6.dt })
}

/// Control-shooting value of the lifted distance between (x,0) and (y,0).
pub fn lifted_distance(eps: f64, x: &[f64], y: &[f64], opts: &ControlOptions) -> Result<f64> {
    let ef = lifted_eps_frame(eps)?;
    let mut a = x.to_vec();
    a.extend_from_slice(&[0.0; 3]);
    let mut b = y.to_vec();
    b.extend_from_slice(&[0.0; 3]);
    Ok(dist_control(&ef, &a, &b, opts)?.value)
}
