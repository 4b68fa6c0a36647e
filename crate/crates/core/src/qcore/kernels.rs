//! In-place application of local operators on dense amplitude buffers.

use super::{CMatrix, C64, ZERO};

#[inline]
fn qubit_mask(n_qubits: usize, q: usize) -> usize {
    1 << (n_qubits - 1 - q)
}

/// Basis offsets of the `2^k` local states; `targets[0]` is the most
/// significant bit of the local index.
fn local_offsets(n_qubits: usize, targets: &[usize]) -> (usize, Vec<usize>) {
    let k = targets.len();
    let masks: Vec<usize> = targets.iter().map(|&q| qubit_mask(n_qubits, q)).collect();
    let all = masks.iter().fold(0, |acc, m| acc | m);
    let offsets = (0..1usize << k)
        .map(|j| (0..k).filter(|&b| (j >> (k - 1 - b)) & 1 == 1).map(|b| masks[b]).sum())
        .collect();
    (all, offsets)
}

/// `data ← (op ⊗ I) data` with `op` acting on `targets`.
pub(crate) fn apply_local(op: &CMatrix, targets: &[usize], n_qubits: usize, data: &mut [C64]) {
    if targets.len() == 1 {
        let m = [[op[(0, 0)], op[(0, 1)]], [op[(1, 0)], op[(1, 1)]]];
        apply_1q(&m, targets[0], n_qubits, data);
        return;
    }
    let (all, offsets) = local_offsets(n_qubits, targets);
    let sub = offsets.len();
    let mut buf = vec![ZERO; sub];
    for base in 0..data.len() {
        if base & all != 0 {
            continue;
        }
        for (j, off) in offsets.iter().enumerate() {
            buf[j] = data[base + off];
        }
        for (r, off) in offsets.iter().enumerate() {
            let mut acc = ZERO;
            for (c, b) in buf.iter().enumerate() {
                acc += op[(r, c)] * b;
            }
            data[base + off] = acc;
        }
    }
}

pub(crate) fn apply_1q(m: &[[C64; 2]; 2], q: usize, n_qubits: usize, data: &mut [C64]) {
    let mask = qubit_mask(n_qubits, q);
    for i in 0..data.len() {
        if i & mask != 0 {
            continue;
        }
        let a = data[i];
        let b = data[i | mask];
        data[i] = m[0][0] * a + m[0][1] * b;
        data[i | mask] = m[1][0] * a + m[1][1] * b;
    }
}

pub(crate) fn apply_cnot(control: usize, target: usize, n_qubits: usize, data: &mut [C64]) {
    let cm = qubit_mask(n_qubits, control);
    let tm = qubit_mask(n_qubits, target);
    for i in 0..data.len() {
        if i & cm != 0 && i & tm == 0 {
            data.swap(i, i | tm);
        }
    }
}

pub(crate) fn apply_cz(a: usize, b: usize, n_qubits: usize, data: &mut [C64]) {
    let m = qubit_mask(n_qubits, a) | qubit_mask(n_qubits, b);
    for (i, z) in data.iter_mut().enumerate() {
        if i & m == m {
            *z = -*z;
        }
    }
}

/// Applies `f` to every column of `m` (column-major storage keeps each
/// column contiguous).
pub(crate) fn for_each_column(m: &mut CMatrix, mut f: impl FnMut(&mut [C64])) {
    let dim = m.nrows();
    for col in m.as_mut_slice().chunks_mut(dim) {
        f(col);
    }
}

/// `m ← A m A†` where `f` applies `A` to a column buffer.
pub(crate) fn conjugate_by(m: &CMatrix, mut f: impl FnMut(&mut [C64])) -> CMatrix {
    let mut left = m.clone();
    for_each_column(&mut left, &mut f);
    let mut right = left.adjoint();
    for_each_column(&mut right, &mut f);
    right.adjoint()
}
