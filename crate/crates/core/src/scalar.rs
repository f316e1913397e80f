use std::fmt::{Debug, Display, LowerExp};

/// Element type the numeric stack is generic over.
///
/// Training normally runs in `f32`; gradient checking runs in `f64` where
/// central differences are trustworthy. The trait adds what `num_traits::Float`
/// lacks: a BLAS-style matmul kernel, a dtype tag for serialization, and
/// byte-level little-endian IO.
pub trait Scalar:
    num_traits::Float + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Dtype tag written into checkpoint indexes.
    const DTYPE: &'static str;
    /// Size of one element in bytes.
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64_(self) -> f64;

    /// `c = alpha * a(m,k) . b(k,n) + beta * c`, row-major contiguous.
    ///
    /// # Safety contract (checked by the caller)
    /// `a.len() >= m*k`, `b.len() >= k*n`, `c.len() >= m*n`.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_rs: isize,
        a_cs: isize,
        b: &[Self],
        b_rs: isize,
        b_cs: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn write_le(v: Self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_(self) -> f64 {
        self as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_rs: isize,
        a_cs: isize,
        b: &[Self],
        b_rs: isize,
        b_cs: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                a_rs,
                a_cs,
                b.as_ptr(),
                b_rs,
                b_cs,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    #[inline]
    fn write_le(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_rs: isize,
        a_cs: isize,
        b: &[Self],
        b_rs: isize,
        b_cs: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                a_rs,
                a_cs,
                b.as_ptr(),
                b_rs,
                b_cs,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    #[inline]
    fn write_le(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference triple loop; the gemm kernel must agree with it exactly on
    // small integer-valued inputs and to tight tolerance on random ones.
    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a[i * k + t] * b[t * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(m, k, n) in &[(1, 1, 1), (2, 3, 4), (5, 5, 5), (7, 13, 3), (16, 16, 16)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let want = naive_matmul(m, k, n, &a, &b);
            let mut got = vec![0.0f64; m * n];
            f64::gemm(m, k, n, 1.0, &a, k as isize, 1, &b, n as isize, 1, 0.0, &mut got);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "gemm mismatch: {g} vs {w}");
            }
        }
    }

    #[test]
    fn gemm_transposed_strides() {
        // a^T . b via strides: a stored (k,m) row-major, walked column-first.
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // (3,2): rows [1,2],[3,4],[5,6]
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0]; // (3,2)
        // a^T is (2,3) = [[1,3,5],[2,4,6]]; a^T.b = [[6,8],[8,10]]
        let mut c = vec![0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, 1, 2, &b, 2, 1, 0.0, &mut c);
        assert_eq!(c, vec![6.0, 8.0, 8.0, 10.0]);
    }

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        f32::write_le(-1.5e-7, &mut buf);
        f64::write_le(3.141592653589793, &mut buf);
        assert_eq!(f32::read_le(&buf[0..4]), -1.5e-7f32);
        assert_eq!(f64::read_le(&buf[4..12]), 3.141592653589793f64);
    }
}
