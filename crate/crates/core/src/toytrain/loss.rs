use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `u.v / (|u| |v|)`.
pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 {
        return Err(Error::ZeroVector(0));
    }
    if nv == 0.0 {
        return Err(Error::ZeroVector(1));
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Row `i`'s positive partner in an interleaved batch of pairs.
#[inline]
pub fn partner(i: usize) -> usize {
    i ^ 1
}

fn check_batch(z: ArrayView2<'_, f64>, temperature: f64) -> Result<Array1<f64>> {
    let rows = z.nrows();
    if rows < 4 || !rows.is_multiple_of(2) {
        return Err(Error::precondition(format!(
            "InfoNCE needs 2N rows with N >= 2, got {rows}"
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::precondition("temperature must be positive"));
    }
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroVector(i));
    }
    Ok(norms)
}

/// Mean InfoNCE over the `2N` anchors of a batch whose rows `2k` and `2k+1`
/// are two views of the same sample.
pub fn info_nce_loss(z: ArrayView2<'_, f64>, temperature: f64) -> Result<f64> {
    Ok(info_nce(z, temperature, false)?.0)
}

/// Gradient of [`info_nce_loss`] with respect to `z`.
pub fn info_nce_gradient(z: ArrayView2<'_, f64>, temperature: f64) -> Result<Array2<f64>> {
    Ok(info_nce(z, temperature, true)?.1.expect("gradient requested"))
}

pub fn info_nce(z: ArrayView2<'_, f64>, temperature: f64, with_grad: bool) -> Result<(f64, Option<Array2<f64>>)> {
    let norms = check_batch(z, temperature)?;
    let n2 = z.nrows();
    let u = &z / &norms.view().insert_axis(Axis(1));
    let s = u.dot(&u.t()) / temperature;

    // softmax over k != i, stored in place of s
    let mut p = s;
    let mut loss = 0.0;
    for (i, mut row) in p.rows_mut().into_iter().enumerate() {
        let pos = row[partner(i)];
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .fold(f64::NEG_INFINITY, |a, (_, &b)| a.max(b));
        let mut denom = 0.0;
        for (k, v) in row.iter_mut().enumerate() {
            *v = if k == i { 0.0 } else { (*v - max).exp() };
            denom += *v;
        }
        loss += denom.ln() + max - pos;
        row.mapv_inplace(|v| v / denom);
    }
    loss /= n2 as f64;
    if !with_grad {
        return Ok((loss, None));
    }

    // dL/ds_ik = (p_ik - [k = partner(i)]) / 2N
    let mut g = p;
    for i in 0..n2 {
        g[[i, partner(i)]] -= 1.0;
    }
    g /= n2 as f64;
    let du = (&g + &g.t()).dot(&u) / temperature;
    // back through u = z / |z|
    let mut dz = du;
    for (i, mut row) in dz.rows_mut().into_iter().enumerate() {
        let ui = u.row(i);
        let radial = row.dot(&ui);
        row.scaled_add(-radial, &ui);
        row.mapv_inplace(|v| v / norms[i]);
    }
    Ok((loss, Some(dz)))
}

/// Mean softmax cross-entropy of `logits` and the gradient `(P - Y) / n`.
pub fn softmax_cross_entropy(logits: ArrayView2<'_, f64>, classes: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut p = logits.to_owned();
    let mut loss = 0.0;
    for (i, mut row) in p.rows_mut().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let denom = row.sum();
        loss += denom.ln() + max - logits[[i, classes[i]]];
        row.mapv_inplace(|v| v / denom);
    }
    for (i, &y) in classes.iter().enumerate() {
        p[[i, y]] -= 1.0;
    }
    p /= n as f64;
    (loss / n as f64, p)
}
