//! Hand-rolled f32 matrix kernels. Accumulation order is fixed per output
//! element (never split across rows or threads), so results are bit-identical
//! for any batch slicing and any worker count.

/// out[m,n] = a[m,k] · b[k,n]
pub fn matmul_into(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (l, &av) in a_row.iter().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k] = g[m,n] · bᵀ (b is [k,n])
pub fn matmul_nt_into(out: &mut [f32], g: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (l, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            let mut acc = 0.0f32;
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            *o = acc;
        }
    }
}

/// out[k,n] = aᵀ · g (a is [m,k], g is [m,n])
pub fn matmul_tn_into(out: &mut [f32], a: &[f32], g: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    out.fill(0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (l, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[l * n..(l + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}
