//! Line searches for the limited-memory quasi-Newton driver.

use serde::{Deserialize, Serialize};

use super::{LbfgsParams, Objective};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearchError {
    IncreaseGradient,
    RoundingError,
    MaximumStep,
    MinimumStep,
    WidthTooSmall,
    MaximumTrials,
    OutOfInterval,
}

/// Trial point state shared by both searches. On entry `x`, `fx`, `g` hold
/// the starting point; on success they hold the accepted point.
pub(crate) struct Trial<'a> {
    pub x: &'a mut [f64],
    pub fx: &'a mut f64,
    pub g: &'a mut [f64],
    pub xp: &'a [f64],
}

pub(crate) type SearchResult = Result<std::result::Result<usize, LineSearchError>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Moré–Thuente search for a step satisfying the strong Wolfe conditions.
pub(crate) fn more_thuente(
    obj: &mut dyn Objective,
    t: Trial<'_>,
    d: &[f64],
    step: &mut f64,
    p: &LbfgsParams,
) -> SearchResult {
    let dginit = dot(t.g, d);
    if dginit > 0.0 {
        return Ok(Err(LineSearchError::IncreaseGradient));
    }
    let finit = *t.fx;
    let dgtest = p.ftol * dginit;
    let mut brackt = false;
    let mut stage1 = true;
    let mut width = p.max_step - p.min_step;
    let mut prev_width = 2.0 * width;
    let (mut stx, mut fx, mut dgx) = (0.0f64, finit, dginit);
    let (mut sty, mut fy, mut dgy) = (0.0f64, finit, dginit);
    let mut uinfo_bad = false;
    let mut count = 0usize;

    loop {
        let (stmin, stmax) = if brackt {
            (stx.min(sty), stx.max(sty))
        } else {
            (stx, *step + 4.0 * (*step - stx))
        };
        *step = step.clamp(p.min_step, p.max_step);
        if (brackt
            && ((*step <= stmin || stmax <= *step)
                || p.max_linesearch <= count + 1
                || uinfo_bad))
            || (brackt && stmax - stmin <= p.xtol * stmax)
        {
            *step = stx;
        }

        for ((xi, &xpi), &di) in t.x.iter_mut().zip(t.xp).zip(d) {
            *xi = xpi + *step * di;
        }
        *t.fx = obj.evaluate(t.x, t.g)?;
        let f = *t.fx;
        let dg = dot(t.g, d);
        let ftest1 = finit + *step * dgtest;
        count += 1;

        if brackt && ((*step <= stmin || stmax <= *step) || uinfo_bad) {
            return Ok(Err(LineSearchError::RoundingError));
        }
        if *step == p.max_step && f <= ftest1 && dg <= dgtest {
            return Ok(Err(LineSearchError::MaximumStep));
        }
        if *step == p.min_step && (ftest1 < f || dgtest <= dg) {
            return Ok(Err(LineSearchError::MinimumStep));
        }
        if brackt && (stmax - stmin) <= p.xtol * stmax {
            return Ok(Err(LineSearchError::WidthTooSmall));
        }
        if f <= ftest1 && dg.abs() <= p.gtol * (-dginit) {
            return Ok(Ok(count));
        }
        if p.max_linesearch <= count {
            return Ok(Err(LineSearchError::MaximumTrials));
        }

        if stage1 && f <= ftest1 && p.ftol.min(p.gtol) * dginit <= dg {
            stage1 = false;
        }

        let res = if stage1 && ftest1 < f && f <= fx {
            // Modified function values for the first stage.
            let fm = f - *step * dgtest;
            let mut fxm = fx - stx * dgtest;
            let mut fym = fy - sty * dgtest;
            let dgm = dg - dgtest;
            let mut dgxm = dgx - dgtest;
            let mut dgym = dgy - dgtest;
            let r = update_trial_interval(
                &mut stx, &mut fxm, &mut dgxm, &mut sty, &mut fym, &mut dgym, step, fm, dgm,
                stmin, stmax, &mut brackt,
            );
            fx = fxm + stx * dgtest;
            fy = fym + sty * dgtest;
            dgx = dgxm + dgtest;
            dgy = dgym + dgtest;
            r
        } else {
            update_trial_interval(
                &mut stx, &mut fx, &mut dgx, &mut sty, &mut fy, &mut dgy, step, f, dg, stmin,
                stmax, &mut brackt,
            )
        };
        uinfo_bad = res.is_err();

        if brackt {
            if 0.66 * prev_width <= (sty - stx).abs() {
                *step = stx + 0.5 * (sty - stx);
            }
            prev_width = width;
            width = (sty - stx).abs();
        }
    }
}

fn cubic_minimizer(u: f64, fu: f64, du: f64, v: f64, fv: f64, dv: f64) -> f64 {
    let d = v - u;
    let theta = (fu - fv) * 3.0 / d + du + dv;
    let s = theta.abs().max(du.abs()).max(dv.abs());
    let a = theta / s;
    let mut gamma = s * (a * a - (du / s) * (dv / s)).max(0.0).sqrt();
    if v < u {
        gamma = -gamma;
    }
    let p = gamma - du + theta;
    let q = gamma - du + gamma + dv;
    u + p / q * d
}

#[allow(clippy::too_many_arguments)]
fn cubic_minimizer_bounded(
    u: f64,
    fu: f64,
    du: f64,
    v: f64,
    fv: f64,
    dv: f64,
    xmin: f64,
    xmax: f64,
) -> f64 {
    let d = v - u;
    let theta = (fu - fv) * 3.0 / d + du + dv;
    let s = theta.abs().max(du.abs()).max(dv.abs());
    let a = theta / s;
    let mut gamma = s * (a * a - (du / s) * (dv / s)).max(0.0).sqrt();
    if u < v {
        gamma = -gamma;
    }
    let p = gamma - dv + theta;
    let q = gamma - dv + gamma + du;
    let r = p / q;
    if r < 0.0 && gamma != 0.0 {
        v - r * d
    } else if d > 0.0 {
        xmax
    } else {
        xmin
    }
}

fn quad_minimizer(u: f64, fu: f64, du: f64, v: f64, fv: f64) -> f64 {
    let a = v - u;
    u + du / ((fu - fv) / a + du) / 2.0 * a
}

fn quad_minimizer_deriv(u: f64, du: f64, v: f64, dv: f64) -> f64 {
    let a = u - v;
    v + dv / (dv - du) * a
}

/// One safeguarded step of the Moré–Thuente interval update. `x` is the best
/// step so far, `y` the other endpoint, `t` the current trial.
#[allow(clippy::too_many_arguments)]
fn update_trial_interval(
    x: &mut f64,
    fx: &mut f64,
    dx: &mut f64,
    y: &mut f64,
    fy: &mut f64,
    dy: &mut f64,
    t: &mut f64,
    ft: f64,
    dt: f64,
    tmin: f64,
    tmax: f64,
    brackt: &mut bool,
) -> std::result::Result<(), LineSearchError> {
    let dsign = dt * (*dx / dx.abs()) < 0.0;
    if *brackt {
        if *t <= x.min(*y) || x.max(*y) <= *t {
            return Err(LineSearchError::OutOfInterval);
        }
        if 0.0 <= *dx * (*t - *x) {
            return Err(LineSearchError::IncreaseGradient);
        }
        if tmax < tmin {
            return Err(LineSearchError::OutOfInterval);
        }
    }

    let bound;
    let mut newt;
    if *fx < ft {
        // Higher function value: the minimum is bracketed.
        *brackt = true;
        bound = true;
        let mc = cubic_minimizer(*x, *fx, *dx, *t, ft, dt);
        let mq = quad_minimizer(*x, *fx, *dx, *t, ft);
        newt = if (mc - *x).abs() < (mq - *x).abs() {
            mc
        } else {
            mc + 0.5 * (mq - mc)
        };
    } else if dsign {
        // Lower value, derivatives of opposite sign: bracketed.
        *brackt = true;
        bound = false;
        let mc = cubic_minimizer(*x, *fx, *dx, *t, ft, dt);
        let mq = quad_minimizer_deriv(*x, *dx, *t, dt);
        newt = if (mc - *t).abs() > (mq - *t).abs() { mc } else { mq };
    } else if dt.abs() < dx.abs() {
        // Lower value, same-sign derivatives, derivative magnitude decreasing.
        bound = true;
        let mc = cubic_minimizer_bounded(*x, *fx, *dx, *t, ft, dt, tmin, tmax);
        let mq = quad_minimizer_deriv(*x, *dx, *t, dt);
        newt = if *brackt {
            if (*t - mc).abs() < (*t - mq).abs() {
                mc
            } else {
                mq
            }
        } else if (*t - mc).abs() > (*t - mq).abs() {
            mc
        } else {
            mq
        };
    } else {
        // Lower value, same-sign derivatives, magnitude not decreasing.
        bound = false;
        newt = if *brackt {
            cubic_minimizer(*t, ft, dt, *y, *fy, *dy)
        } else if *x < *t {
            tmax
        } else {
            tmin
        };
    }

    if *fx < ft {
        *y = *t;
        *fy = ft;
        *dy = dt;
    } else {
        if dsign {
            *y = *x;
            *fy = *fx;
            *dy = *dx;
        }
        *x = *t;
        *fx = ft;
        *dx = dt;
    }

    newt = newt.clamp(tmin, tmax);
    if *brackt && bound {
        let mq = *x + 0.66 * (*y - *x);
        if *x < *y {
            newt = newt.min(mq);
        } else {
            newt = newt.max(mq);
        }
    }
    *t = newt;
    Ok(())
}

/// Backtracking search for the orthant-wise method: every trial point is
/// projected onto the orthant of the starting point, and acceptance uses the
/// sufficient-decrease test against the pseudo-gradient `pg`.
pub(crate) fn backtracking_owlqn(
    obj: &mut dyn Objective,
    t: Trial<'_>,
    d: &[f64],
    step: &mut f64,
    pg: &[f64],
    orthant: &[f64],
    c1: f64,
    p: &LbfgsParams,
) -> SearchResult {
    let finit = *t.fx;
    let mut count = 0usize;
    loop {
        for i in 0..t.x.len() {
            let v = t.xp[i] + *step * d[i];
            t.x[i] = if v * orthant[i] <= 0.0 { 0.0 } else { v };
        }
        let smooth = obj.evaluate(t.x, t.g)?;
        *t.fx = smooth + c1 * t.x.iter().map(|v| v.abs()).sum::<f64>();
        count += 1;

        let dgtest: f64 = t
            .x
            .iter()
            .zip(t.xp)
            .zip(pg)
            .map(|((x, xp), g)| (x - xp) * g)
            .sum();
        if *t.fx <= finit + p.ftol * dgtest {
            return Ok(Ok(count));
        }
        if *step < p.min_step {
            return Ok(Err(LineSearchError::MinimumStep));
        }
        if *step > p.max_step {
            return Ok(Err(LineSearchError::MaximumStep));
        }
        if p.max_linesearch <= count {
            return Ok(Err(LineSearchError::MaximumTrials));
        }
        *step *= 0.5;
    }
}
