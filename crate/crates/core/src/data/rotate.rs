use super::{Dataset, InherentSpec};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Counterclockwise rotation by `quarter_turns` × 90°.
pub fn rotate(image: &Matrix, quarter_turns: u8) -> Result<Matrix> {
    let (h, w) = image.shape();
    let data = rotate_flat(image.as_slice(), h, w, quarter_turns)?;
    let (oh, ow) = if quarter_turns % 2 == 1 { (w, h) } else { (h, w) };
    Matrix::from_vec(oh, ow, data)
}

/// [`rotate`] on a row-major `h × w` pixel buffer.
pub fn rotate_flat(pixels: &[f64], h: usize, w: usize, quarter_turns: u8) -> Result<Vec<f64>> {
    if pixels.len() != h * w {
        return Err(Error::Shape(format!(
            "{} pixels for a {h}x{w} image",
            pixels.len()
        )));
    }
    let turns = quarter_turns % 4;
    if turns % 2 == 1 && h != w {
        return Err(Error::Input(format!(
            "odd quarter turns need a square image, got {h}x{w}"
        )));
    }
    let at = |r: usize, c: usize| pixels[r * w + c];
    let mut out = Vec::with_capacity(pixels.len());
    match turns {
        0 => out.extend_from_slice(pixels),
        1 => {
            for i in 0..h {
                for j in 0..w {
                    out.push(at(j, w - 1 - i));
                }
            }
        }
        2 => {
            for i in 0..h {
                for j in 0..w {
                    out.push(at(h - 1 - i, w - 1 - j));
                }
            }
        }
        _ => {
            for i in 0..h {
                for j in 0..w {
                    out.push(at(h - 1 - j, i));
                }
            }
        }
    }
    Ok(out)
}

/// One pool per rotation: pool `j` holds every image turned `turns[j]` quarter turns.
pub fn rotated_pools(
    images: &Matrix,
    labels: &[usize],
    h: usize,
    w: usize,
    turns: &[u8],
) -> Result<(Vec<Dataset>, Vec<InherentSpec>)> {
    if images.rows() != labels.len() || images.cols() != h * w {
        return Err(Error::Shape("images do not match labels or dimensions".into()));
    }
    let mut pools = Vec::with_capacity(turns.len());
    for (j, &t) in turns.iter().enumerate() {
        let mut data = Vec::with_capacity(images.rows() * h * w);
        for row in images.iter_rows() {
            data.extend(rotate_flat(row, h, w, t)?);
        }
        pools.push(Dataset::new(
            Matrix::from_vec(images.rows(), h * w, data)?,
            labels.to_vec(),
            vec![j; labels.len()],
        )?);
    }
    let specs = turns
        .iter()
        .enumerate()
        .map(|(index, &quarter_turns)| InherentSpec::RotatedImages {
            index,
            quarter_turns,
        })
        .collect();
    Ok((pools, specs))
}
