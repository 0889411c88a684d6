//! Reference implementations shared by the integration tests. None of these
//! call into the library code they are used to check.

#![allow(dead_code, clippy::almost_swapped, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scorebreak_core::microbench::operands::*;
use scorebreak_core::microbench::KernelKind;

/// One step of a kernel body, as a tiny register machine sees it.
#[derive(Clone, Copy)]
enum Op {
    Count,
    IAdd,
    IMul,
    IDiv,
    FAdd,
    FMul,
    FDiv,
    Store,
    StoreLoad,
}

/// Scalar interpreter over the loop body of each kernel. Returns the
/// checksum the optimized kernel must produce after `2^n` iterations.
pub fn reference_checksum(kind: KernelKind, k: u32, n: u32) -> u64 {
    use KernelKind::*;
    let (body, reps): (Vec<Op>, u32) = match kind {
        Loop => (vec![Op::Count], 1),
        IntAdd => (vec![Op::IAdd], k),
        IntMul => (vec![Op::IMul], k),
        IntAddMul => (vec![Op::IAdd, Op::IMul], k),
        IntDiv => (vec![Op::IDiv], k),
        IntStore | FpStore => (vec![Op::Store], k),
        IntStoreLoad | FpStoreLoad => (vec![Op::StoreLoad], k),
        FpAdd => (vec![Op::FAdd], k),
        FpMul => (vec![Op::FMul], k),
        FpDiv => (vec![Op::FDiv], k),
    };
    let fp_value = matches!(kind, FpStore | FpStoreLoad);

    let mut ireg: u64 = match kind {
        IntDiv => DIV_SEED,
        Loop => 0,
        _ => INT_SEED,
    };
    let mut freg: f64 = FP_SEED;
    // Memory cell holds raw bits so both integer and float kernels share it.
    let mut cell: u64 = 0;
    let mut xor: u64 = 0;

    for i in 0..(1u64 << n) {
        let mut v: u64 = if fp_value { (i as f64).to_bits() } else { i };
        for _ in 0..reps {
            for op in &body {
                match op {
                    Op::Count => ireg += 1,
                    Op::IAdd => ireg = ireg.wrapping_add(INT_ADDEND),
                    Op::IMul => ireg = ireg.wrapping_mul(INT_FACTOR),
                    Op::IDiv => ireg = DIV_NUMERATOR / ireg,
                    Op::FAdd => freg += FP_ADDEND,
                    Op::FMul => freg *= FP_FACTOR,
                    Op::FDiv => freg /= FP_FACTOR,
                    Op::Store => cell = v,
                    Op::StoreLoad => {
                        cell = v;
                        v = cell;
                    }
                }
            }
        }
        if matches!(kind, IntStoreLoad | FpStoreLoad) {
            xor ^= v;
        }
    }

    match kind {
        Loop | IntAdd | IntMul | IntAddMul | IntDiv => ireg,
        FpAdd | FpMul | FpDiv => freg.to_bits(),
        IntStore | FpStore => cell,
        IntStoreLoad | FpStoreLoad => xor,
    }
}

/// Solves the normal equations `(AᵀA) x = Aᵀb` restricted to `cols` by
/// Gaussian elimination with partial pivoting. `None` if singular.
fn normal_equations(a: &[Vec<f64>], b: &[f64], cols: &[usize]) -> Option<Vec<f64>> {
    let s = cols.len();
    let mut m = vec![vec![0.0; s + 1]; s];
    for (r, &ci) in cols.iter().enumerate() {
        for (c, &cj) in cols.iter().enumerate() {
            m[r][c] = a.iter().map(|row| row[ci] * row[cj]).sum();
        }
        m[r][s] = a.iter().zip(b).map(|(row, &bi)| row[ci] * bi).sum();
    }
    for p in 0..s {
        let piv = (p..s).max_by(|&x, &y| m[x][p].abs().total_cmp(&m[y][p].abs()))?;
        if m[piv][p].abs() < 1e-12 {
            return None;
        }
        m.swap(p, piv);
        for r in p + 1..s {
            let f = m[r][p] / m[p][p];
            for c in p..=s {
                m[r][c] -= f * m[p][c];
            }
        }
    }
    let mut x = vec![0.0; s];
    for r in (0..s).rev() {
        let tail: f64 = (r + 1..s).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][s] - tail) / m[r][r];
    }
    Some(x)
}

pub fn residual_norm(a: &[Vec<f64>], x: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(row, &bi)| {
            let ax: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum();
            (ax - bi).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Exact NNLS by trying every support set: the optimum is the unconstrained
/// fit on some subset of columns with all coefficients non-negative.
pub fn nnls_enumerate(a: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, f64) {
    let p = a[0].len();
    let mut best = (vec![0.0; p], residual_norm(a, &vec![0.0; p], b));
    for mask in 1u32..(1 << p) {
        let cols: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
        let Some(z) = normal_equations(a, b, &cols) else { continue };
        if z.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut x = vec![0.0; p];
        for (&c, &v) in cols.iter().zip(&z) {
            x[c] = v;
        }
        let r = residual_norm(a, &x, b);
        if r < best.1 {
            best = (x, r);
        }
    }
    best
}

/// A seeded Gaussian problem with `m` rows and `p` columns. With an
/// unstructured `b`, some constraints bind in most draws.
pub fn random_problem(seed: u64, m: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<Vec<f64>> = (0..m).map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let b = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
    (a, b)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// A spec file bundled at the workspace root.
pub fn bundled_spec(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name)
}

/// Values of `attr="…"` on every line containing `marker`, in document order.
pub fn svg_attr(svg: &str, marker: &str, attr: &str) -> Vec<f64> {
    let key = format!("{attr}=\"");
    svg.lines()
        .filter(|l| l.contains(marker))
        .filter_map(|l| {
            let start = l.find(&key)? + key.len();
            let end = start + l[start..].find('"')?;
            l[start..end].parse().ok()
        })
        .collect()
}

/// Disassembly of the running test binary, if objdump is available.
pub fn disassembly() -> Option<String> {
    let exe = std::env::current_exe().ok()?;
    let out = std::process::Command::new("objdump").args(["-d", "--no-show-raw-insn"]).arg(&exe).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Instruction mnemonics of one symbol in `asm`.
pub fn mnemonics<'a>(asm: &'a str, symbol: &str) -> Vec<&'a str> {
    let header = format!("<{symbol}>:");
    let Some(start) = asm.lines().position(|l| l.ends_with(&header)) else {
        panic!("symbol {symbol} not found in disassembly");
    };
    asm.lines()
        .skip(start + 1)
        .take_while(|l| !l.trim().is_empty())
        .filter_map(|l| l.split('\t').nth(1))
        .filter_map(|ins| ins.split_whitespace().next())
        .collect()
}

pub fn counts_as(family: &str, mnemonic: &str) -> bool {
    match (std::env::consts::ARCH, family) {
        ("x86_64", "add") => matches!(mnemonic, "add" | "addq" | "addl"),
        ("x86_64", "fadd") => matches!(mnemonic, "addsd" | "vaddsd"),
        (_, f) => mnemonic == f,
    }
}
