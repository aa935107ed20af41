//! Versioned binary encoding of fitted warps.

use std::io::{Read, Write};

use nalgebra::Vector2;

use super::bspline::{Warp, WarpDomain};

pub const SIDECAR_MAGIC: [u8; 4] = *b"NRSW";
pub const SIDECAR_VERSION: u32 = 1;

pub fn write_warp<W: Write>(w: &Warp, out: &mut W) -> std::io::Result<()> {
    out.write_all(&SIDECAR_MAGIC)?;
    out.write_all(&SIDECAR_VERSION.to_le_bytes())?;
    out.write_all(&(w.spans as u32).to_le_bytes())?;
    let d = w.domain;
    for v in [d.u_min, d.u_max, d.v_min, d.v_max, w.lambda, w.rms_residual] {
        out.write_all(&v.to_le_bytes())?;
    }
    for c in &w.coeffs {
        out.write_all(&c.x.to_le_bytes())?;
        out.write_all(&c.y.to_le_bytes())?;
    }
    Ok(())
}

fn invalid(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string())
}

pub fn read_warp<R: Read>(input: &mut R) -> std::io::Result<Warp> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != SIDECAR_MAGIC {
        return Err(invalid("not a warp sidecar"));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != SIDECAR_VERSION {
        return Err(invalid(&format!("unsupported warp sidecar version {version}")));
    }
    input.read_exact(&mut b4)?;
    let spans = u32::from_le_bytes(b4) as usize;
    if spans == 0 || spans > 1024 {
        return Err(invalid("bad control grid size"));
    }
    let mut f = || -> std::io::Result<f64> {
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let domain = WarpDomain { u_min: f()?, u_max: f()?, v_min: f()?, v_max: f()? };
    let lambda = f()?;
    let rms = f()?;
    let n = (spans + 3) * (spans + 3);
    let mut coeffs = Vec::with_capacity(n);
    for _ in 0..n {
        coeffs.push(Vector2::new(f()?, f()?));
    }
    let mut w = Warp::from_coefficients(domain, spans, coeffs).ok_or_else(|| invalid("invalid warp data"))?;
    w.lambda = lambda;
    w.rms_residual = rms;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let mut w = Warp::identity(WarpDomain { u_min: -0.5, u_max: 0.5, v_min: -0.25, v_max: 0.3 }, 5);
        w.coefficients_mut()[7].x += 0.125;
        w.lambda = 1e-3;
        let mut a = Vec::new();
        write_warp(&w, &mut a).unwrap();
        let r = read_warp(&mut a.as_slice()).unwrap();
        assert_eq!(r, w);
        let mut b = Vec::new();
        write_warp(&r, &mut b).unwrap();
        assert_eq!(a, b);
        a[4] = 9;
        assert!(read_warp(&mut a.as_slice()).is_err());
    }
}
