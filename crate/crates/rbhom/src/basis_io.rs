//! Binary container for a reduced basis.
//!
//! Layout (all integers and IEEE-754 doubles little-endian):
//!
//! ```text
//! magic            8 bytes  "RBHOM001"
//! version          u32
//! n_per_side       u32
//! n_basis          u32
//! provenance_len   u32
//! parameter box    6 x f64  (delta, theta0, reference corners)
//! seed             u64
//! payload_len      u64
//! payload sha256   32 bytes
//! payload:
//!   basis vectors            n_basis x n_dof
//!   reduced stiffness blocks 9 x 2 x (n_basis x n_basis), row-major
//!   reduced load blocks      9 x 2 x n_basis
//!   riesz gram               (18 + 18 n_basis)^2, row-major
//!   provenance records       provenance_len x (u32 id, u32 dir, 5 x f64, f64 bound)
//! ```
//!
//! Loading verifies the magic, version, payload length and digest, and
//! rejects a basis whose mesh resolution does not match the target system.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::NUM_BLOCKS;
use crate::param::{CellParam, ParamBox, REF_CORNERS};
use crate::rb::{ReducedBasis, Selection, LOAD_TERMS, STIFF_TERMS};

pub const MAGIC: &[u8; 8] = b"RBHOM001";
pub const VERSION: u32 = 1;

fn file_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::BasisFile { path: path.to_path_buf(), reason: reason.into() }
}

struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn f64(&mut self) -> f64 {
        let v = f64::from_le_bytes(self.buf[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }
}

/// Serialized payload size in bytes for given dimensions.
fn payload_len(n_dof: usize, n_basis: usize, prov: usize) -> usize {
    let gram_dim = LOAD_TERMS + STIFF_TERMS * n_basis;
    8 * (n_basis * n_dof)
        + 8 * (NUM_BLOCKS * 2 * n_basis * n_basis)
        + 8 * (NUM_BLOCKS * 2 * n_basis)
        + 8 * gram_dim * gram_dim
        + prov * (4 + 4 + 8 * 6)
}

/// Write the basis container; the round trip is bit-exact on all payloads.
pub fn save_basis(basis: &ReducedBasis, path: &Path) -> Result<()> {
    let n = basis.len();
    let n_dof = if n > 0 { basis.basis_vector(0).len() } else { 0 };
    let mut payload = PayloadWriter { buf: Vec::with_capacity(payload_len(n_dof, n, basis.provenance().len())) };
    for j in 0..n {
        for &v in basis.basis_vector(j) {
            payload.f64(v);
        }
    }
    for block in 0..NUM_BLOCKS {
        for d in 0..2 {
            let m = &basis.m_rb[block][d];
            for r in 0..n {
                for c in 0..n {
                    payload.f64(m[(r, c)]);
                }
            }
        }
    }
    for block in 0..NUM_BLOCKS {
        for d in 0..2 {
            for r in 0..n {
                payload.f64(basis.g_rb[block][d][r]);
            }
        }
    }
    let gram_dim = LOAD_TERMS + STIFF_TERMS * n;
    debug_assert_eq!(basis.gram.nrows(), gram_dim);
    for r in 0..gram_dim {
        for c in 0..gram_dim {
            payload.f64(basis.gram[(r, c)]);
        }
    }
    for sel in basis.provenance() {
        payload.u32(sel.param_id as u32);
        payload.u32(sel.direction as u32);
        for v in sel.param.as_array() {
            payload.f64(v);
        }
        payload.f64(sel.bound);
    }

    let digest = Sha256::digest(&payload.buf);
    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(basis.n_per_side() as u32).to_le_bytes())?;
    file.write_all(&(n as u32).to_le_bytes())?;
    file.write_all(&(basis.provenance().len() as u32).to_le_bytes())?;
    let pbox = basis.param_box();
    for v in [
        pbox.delta,
        pbox.theta0,
        REF_CORNERS[0],
        REF_CORNERS[1],
        REF_CORNERS[2],
        REF_CORNERS[3],
    ] {
        file.write_all(&v.to_le_bytes())?;
    }
    file.write_all(&basis.seed().to_le_bytes())?;
    file.write_all(&(payload.buf.len() as u64).to_le_bytes())?;
    file.write_all(&digest)?;
    file.write_all(&payload.buf)?;
    Ok(())
}

/// Hex digest of the basis payload, echoed in report headers.
pub fn basis_fingerprint(basis: &ReducedBasis) -> String {
    // digest over the header identity plus the basis vectors
    let mut hasher = Sha256::new();
    hasher.update(MAGIC);
    hasher.update((basis.n_per_side() as u32).to_le_bytes());
    hasher.update((basis.len() as u32).to_le_bytes());
    hasher.update(basis.param_box().delta.to_le_bytes());
    hasher.update(basis.param_box().theta0.to_le_bytes());
    hasher.update(basis.seed().to_le_bytes());
    for j in 0..basis.len() {
        for &v in basis.basis_vector(j) {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().take(10).map(|b| format!("{b:02x}")).collect()
}

/// Load a basis and bind it to a compatible system.
pub fn load_basis(path: &Path, system: &crate::cell::AffineSystem) -> Result<ReducedBasis> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 8 + 4 * 4 + 8 * 6 + 8 + 8 + 32];
    file.read_exact(&mut header)
        .map_err(|_| file_err(path, "truncated header"))?;
    if &header[0..8] != MAGIC {
        return Err(file_err(path, "bad magic"));
    }
    let rd_u32 = |off: usize| u32::from_le_bytes(header[off..off + 4].try_into().unwrap());
    let rd_f64 = |off: usize| f64::from_le_bytes(header[off..off + 8].try_into().unwrap());
    let version = rd_u32(8);
    if version != VERSION {
        return Err(file_err(path, format!("unsupported version {version}")));
    }
    let n_per_side = rd_u32(12) as usize;
    let n_basis = rd_u32(16) as usize;
    let prov_len = rd_u32(20) as usize;
    let delta = rd_f64(24);
    let theta0 = rd_f64(32);
    let corners = [rd_f64(40), rd_f64(48), rd_f64(56), rd_f64(64)];
    if corners != REF_CORNERS {
        return Err(file_err(path, "reference corners mismatch"));
    }
    let seed = u64::from_le_bytes(header[72..80].try_into().unwrap());
    let declared_len = u64::from_le_bytes(header[80..88].try_into().unwrap()) as usize;
    let digest: [u8; 32] = header[88..120].try_into().unwrap();

    if n_per_side != system.mesh().n_per_side() {
        return Err(Error::FingerprintMismatch {
            basis: n_per_side,
            system: system.mesh().n_per_side(),
        });
    }
    let n_dof = system.n_dof();
    let expect = payload_len(n_dof, n_basis, prov_len);
    if declared_len != expect {
        return Err(file_err(
            path,
            format!("payload length {declared_len} does not match dimensions (expected {expect})"),
        ));
    }
    let mut payload = vec![0u8; declared_len];
    file.read_exact(&mut payload)
        .map_err(|_| file_err(path, "truncated payload"))?;
    let mut trailing = Vec::new();
    file.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(file_err(path, format!("{} trailing bytes", trailing.len())));
    }
    let actual: [u8; 32] = Sha256::digest(&payload).into();
    if actual != digest {
        return Err(file_err(path, "payload digest mismatch (corrupt file)"));
    }

    let mut rd = PayloadReader { buf: &payload, pos: 0 };
    let basis_vectors: Vec<Vec<f64>> = (0..n_basis)
        .map(|_| (0..n_dof).map(|_| rd.f64()).collect())
        .collect();
    let mut m_rb: Vec<[DMatrix<f64>; 2]> = (0..NUM_BLOCKS)
        .map(|_| [DMatrix::zeros(n_basis, n_basis), DMatrix::zeros(n_basis, n_basis)])
        .collect();
    for pair in m_rb.iter_mut() {
        for m in pair.iter_mut() {
            for r in 0..n_basis {
                for c in 0..n_basis {
                    m[(r, c)] = rd.f64();
                }
            }
        }
    }
    let mut g_rb: Vec<[DVector<f64>; 2]> = (0..NUM_BLOCKS)
        .map(|_| [DVector::zeros(n_basis), DVector::zeros(n_basis)])
        .collect();
    for pair in g_rb.iter_mut() {
        for g in pair.iter_mut() {
            for r in 0..n_basis {
                g[r] = rd.f64();
            }
        }
    }
    let gram_dim = LOAD_TERMS + STIFF_TERMS * n_basis;
    let mut gram = DMatrix::zeros(gram_dim, gram_dim);
    for r in 0..gram_dim {
        for c in 0..gram_dim {
            gram[(r, c)] = rd.f64();
        }
    }
    let mut provenance = Vec::with_capacity(prov_len);
    for _ in 0..prov_len {
        let param_id = rd.u32() as usize;
        let direction = rd.u32() as usize;
        let vals = [rd.f64(), rd.f64(), rd.f64(), rd.f64(), rd.f64()];
        let bound = rd.f64();
        provenance.push(Selection {
            param_id,
            direction,
            param: CellParam {
                b1: vals[0],
                c1: vals[1],
                b2: vals[2],
                c2: vals[3],
                theta: vals[4],
            },
            bound,
        });
    }
    debug_assert_eq!(rd.pos, payload.len());

    Ok(ReducedBasis {
        n_per_side,
        param_box: ParamBox::new(delta, theta0).map_err(|e| file_err(path, e.to_string()))?,
        seed,
        basis: basis_vectors,
        m_rb,
        g_rb,
        gram,
        provenance,
        trace: Vec::new(),
        stop_reason: None,
    })
}
