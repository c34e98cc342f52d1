//! Strided general matrix multiply, dispatched to `matrixmultiply`.

/// Describes one matrix operand as a base slice plus row/column strides.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], offset: usize, rs: usize, cs: usize) -> Self {
        Self { data, offset, rs: rs as isize, cs: cs as isize }
    }

    /// Same storage viewed as the transpose.
    pub fn t(self) -> Self {
        Self { rs: self.cs, cs: self.rs, ..self }
    }
}

pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], offset: usize, rs: usize, cs: usize) -> Self {
        Self { data, offset, rs: rs as isize, cs: cs as isize }
    }
}

fn check_extent<T>(len: usize, offset: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = offset as isize + (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand of {}x{} (rs={rs}, cs={cs}, offset={offset}) exceeds buffer of {len} {}",
        rows,
        cols,
        std::any::type_name::<T>()
    );
}

/// Scalar types that can drive the GEMM kernel.
pub trait Gemm: Copy {
    /// `c = alpha * a(m x k) * b(k x n) + beta * c`.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: MatRef<'_, Self>, b: MatRef<'_, Self>, beta: Self, c: MatMut<'_, Self>);
}

macro_rules! impl_gemm {
    ($t:ty, $kernel:path) => {
        impl Gemm for $t {
            fn gemm(m: usize, k: usize, n: usize, alpha: $t, a: MatRef<'_, $t>, b: MatRef<'_, $t>, beta: $t, c: MatMut<'_, $t>) {
                check_extent::<$t>(a.data.len(), a.offset, m, k, a.rs, a.cs);
                check_extent::<$t>(b.data.len(), b.offset, k, n, b.rs, b.cs);
                check_extent::<$t>(c.data.len(), c.offset, m, n, c.rs, c.cs);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every element addressed by (offset, rows, cols, strides)
                // was bounds-checked above against the owning slices, and `c`
                // is uniquely borrowed so it cannot alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.data.as_ptr().add(a.offset),
                        a.rs,
                        a.cs,
                        b.data.as_ptr().add(b.offset),
                        b.rs,
                        b.cs,
                        beta,
                        c.data.as_mut_ptr().add(c.offset),
                        c.rs,
                        c.cs,
                    );
                }
            }
        }
    };
}

impl_gemm!(f32, matrixmultiply::sgemm);
impl_gemm!(f64, matrixmultiply::dgemm);
