//! Discretized sets on a shared net with two-sided measure brackets.
//!
//! A `CellSet` tracks, per cell, an outer indicator (the cell may intersect
//! the set) and a certified interior depth (the ball of that radius around
//! the cell center is contained in the set). A cell counts as inner when its
//! depth reaches the covering radius, because the Voronoi cell sits inside
//! that ball. Products use the exact ball identity of bi-invariant metrics,
//! B(x,r) B(y,s) = B(xy, r+s): products of cell-center balls certify inner
//! depth, and a 2 r_net spread around center products covers the true set.

use rayon::prelude::*;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::group::GroupElement;
use crate::measure::MeasureEstimate;
use crate::net::Net;
use crate::region::SetRegion;

#[derive(Clone)]
pub struct CellSet {
    pub net: Arc<Net>,
    /// cell may intersect the set
    pub outer: Vec<bool>,
    /// certified radius of a contained ball around the cell center
    pub inner_depth: Vec<f64>,
    /// false when some inner depth came from an uncertified fallback
    pub certified: bool,
}

impl std::fmt::Debug for CellSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = self.measure();
        f.debug_struct("CellSet")
            .field("cells", &self.net.len())
            .field("outer", &self.outer.iter().filter(|b| **b).count())
            .field("inner", &self.inner_count())
            .field("bracket", &(m.lower, m.upper))
            .finish()
    }
}

impl CellSet {
    pub fn empty(net: &Arc<Net>) -> Self {
        CellSet {
            net: net.clone(),
            outer: vec![false; net.len()],
            inner_depth: vec![0.0; net.len()],
            certified: true,
        }
    }

    pub fn is_inner(&self, i: usize) -> bool {
        self.inner_depth[i] >= self.net.cell_radius
    }

    pub fn inner_count(&self) -> usize {
        (0..self.net.len()).filter(|&i| self.is_inner(i)).count()
    }

    /// Discretize a region: outer cells by a margin test at the center,
    /// inner depth from the region's depth oracle. Falls back to a bare
    /// center test (uncertified) if a sub-shape has no oracle.
    pub fn discretize(region: &SetRegion, net: &Arc<Net>) -> Result<Self> {
        if region.group.name() != net.group.name() {
            return Err(Error::GroupMismatch(format!(
                "region group {} does not match net group {}",
                region.group.name(),
                net.group.name()
            )));
        }
        let r_net = net.cell_radius;
        let rows: Vec<(bool, f64, bool)> = net
            .centers
            .par_iter()
            .map(|c| match region.depth(c) {
                Some(d) => (d > -r_net, d.max(0.0), true),
                None => {
                    let hit = region.contains(c);
                    (hit, if hit { r_net } else { 0.0 }, false)
                }
            })
            .collect();
        let mut out = CellSet::empty(net);
        for (i, (o, d, cert)) in rows.into_iter().enumerate() {
            out.outer[i] = o;
            out.inner_depth[i] = d;
            out.certified &= cert;
        }
        Ok(out)
    }

    /// Certified measure bracket: inner-cell weight sum to outer-cell sum.
    pub fn measure(&self) -> MeasureEstimate {
        let mut lower = 0.0;
        // upper via the complement so a full outer set yields exactly 1
        let mut co_upper = 0.0;
        for i in 0..self.net.len() {
            if !self.outer[i] {
                co_upper += self.net.weights[i];
            }
            if self.is_inner(i) {
                lower += self.net.weights[i];
            }
        }
        let upper = (1.0 - co_upper).clamp(0.0, 1.0);
        let mut est = MeasureEstimate::cell_bracket(lower.min(upper), upper);
        est.certified = self.certified;
        est
    }

    pub fn union(&self, other: &CellSet) -> Result<CellSet> {
        self.check_net(other)?;
        let mut out = self.clone();
        for i in 0..out.outer.len() {
            out.outer[i] |= other.outer[i];
            out.inner_depth[i] = out.inner_depth[i].max(other.inner_depth[i]);
        }
        out.certified &= other.certified;
        Ok(out)
    }

    pub fn inter(&self, other: &CellSet) -> Result<CellSet> {
        self.check_net(other)?;
        let mut out = self.clone();
        for i in 0..out.outer.len() {
            out.outer[i] &= other.outer[i];
            out.inner_depth[i] = out.inner_depth[i].min(other.inner_depth[i]);
        }
        out.certified &= other.certified;
        Ok(out)
    }

    fn check_net(&self, other: &CellSet) -> Result<()> {
        if self.net.hash != other.net.hash {
            return Err(Error::NetMismatch);
        }
        Ok(())
    }

    /// Minkowski product AB with certified bracket semantics.
    pub fn minkowski_product(&self, other: &CellSet) -> Result<CellSet> {
        self.check_net(other)?;
        let net = &self.net;
        let r_net = net.cell_radius;
        let a_cells: Vec<usize> = (0..net.len()).filter(|&i| self.outer[i]).collect();
        let b_cells: Vec<usize> = (0..net.len()).filter(|&i| other.outer[i]).collect();
        let mut acc = Accumulator::new(net.len());
        let chunk = (a_cells.len() / rayon::current_num_threads().max(1)).max(1);
        let partials: Vec<Accumulator> = a_cells
            .par_chunks(chunk)
            .map(|rows| {
                let mut local = Accumulator::new(net.len());
                for &ia in rows {
                    let da = self.inner_depth[ia];
                    for &ib in &b_cells {
                        let db = other.inner_depth[ib];
                        let p = net
                            .group
                            .multiply(&net.centers[ia], &net.centers[ib])
                            .expect("same group");
                        let (c, dsnap) = net.nearest(&p);
                        local.add(c, dsnap, da + db - dsnap);
                    }
                }
                local
            })
            .collect();
        for p in partials {
            acc.merge(p);
        }
        let mut out = acc.finish(net, 2.0 * r_net);
        out.certified = self.certified && other.certified;
        Ok(out)
    }

    /// Left or right translate by g, snapped to the net.
    pub fn translate(&self, g: &GroupElement, left: bool) -> CellSet {
        let net = &self.net;
        let mut acc = Accumulator::new(net.len());
        for i in 0..net.len() {
            if !self.outer[i] {
                continue;
            }
            let p = if left {
                net.group.multiply(g, &net.centers[i])
            } else {
                net.group.multiply(&net.centers[i], g)
            }
            .expect("same group");
            let (c, dsnap) = net.nearest(&p);
            acc.add(c, dsnap, self.inner_depth[i] - dsnap);
        }
        let mut out = acc.finish(net, net.cell_radius);
        out.certified = self.certified;
        out
    }

    /// The set of inverses, snapped to the net.
    pub fn inverse(&self) -> CellSet {
        let net = &self.net;
        let mut acc = Accumulator::new(net.len());
        for i in 0..net.len() {
            if !self.outer[i] {
                continue;
            }
            let p = net.group.inverse(&net.centers[i]);
            let (c, dsnap) = net.nearest(&p);
            acc.add(c, dsnap, self.inner_depth[i] - dsnap);
        }
        let mut out = acc.finish(net, net.cell_radius);
        out.certified = self.certified;
        out
    }

    /// Outer symmetrization A union A^{-1}.
    pub fn symmetrize(&self) -> CellSet {
        self.union(&self.inverse()).expect("same net")
    }

    /// Intersection with a rectangle region on the same net.
    pub fn slice(&self, rect: &SetRegion) -> Result<CellSet> {
        let r = CellSet::discretize(rect, &self.net)?;
        self.inter(&r)
    }

    /// Serialize: magic, version, net hash, certified flag, run-length
    /// encoded outer and inner bitsets, little-endian throughout.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"HLCS")?;
        w.write_all(&[1u8])?;
        let hash = self.net.hash.as_bytes();
        w.write_all(&(hash.len() as u16).to_le_bytes())?;
        w.write_all(hash)?;
        w.write_all(&[self.certified as u8])?;
        w.write_all(&(self.net.len() as u64).to_le_bytes())?;
        let inner: Vec<bool> = (0..self.net.len()).map(|i| self.is_inner(i)).collect();
        write_rle(w, &self.outer)?;
        write_rle(w, &inner)?;
        Ok(())
    }

    /// Deserialize against a known net. Inner depths collapse to the
    /// covering radius (the certified minimum for stored inner cells).
    pub fn read_from<R: Read>(r: &mut R, net: &Arc<Net>) -> Result<CellSet> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"HLCS" {
            return Err(Error::Invalid("bad magic bytes".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != 1 {
            return Err(Error::Invalid(format!("unknown version {}", version[0])));
        }
        let mut len_bytes = [0u8; 2];
        r.read_exact(&mut len_bytes)?;
        let mut hash = vec![0u8; u16::from_le_bytes(len_bytes) as usize];
        r.read_exact(&mut hash)?;
        if hash != net.hash.as_bytes() {
            return Err(Error::NetMismatch);
        }
        let mut cert = [0u8; 1];
        r.read_exact(&mut cert)?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let cells = u64::from_le_bytes(count) as usize;
        if cells != net.len() {
            return Err(Error::NetMismatch);
        }
        let outer = read_rle(r, cells)?;
        let inner = read_rle(r, cells)?;
        let mut out = CellSet::empty(net);
        out.outer = outer;
        for (i, is_in) in inner.iter().enumerate() {
            if *is_in {
                out.inner_depth[i] = net.cell_radius;
            }
        }
        out.certified = cert[0] != 0;
        Ok(out)
    }
}

/// Accumulates snapped certified balls B(center_c, v) inside a target set,
/// plus the snap slack needed for outer dilation.
struct Accumulator {
    dsnap: Vec<f64>,
    v: Vec<f64>,
    touched: Vec<bool>,
}

impl Accumulator {
    fn new(cells: usize) -> Self {
        Accumulator {
            dsnap: vec![0.0; cells],
            v: vec![f64::NEG_INFINITY; cells],
            touched: vec![false; cells],
        }
    }

    fn add(&mut self, c: usize, dsnap: f64, v: f64) {
        self.touched[c] = true;
        self.dsnap[c] = self.dsnap[c].max(dsnap);
        self.v[c] = self.v[c].max(v);
    }

    fn merge(&mut self, other: Accumulator) {
        for i in 0..self.touched.len() {
            if other.touched[i] {
                self.add(i, other.dsnap[i], other.v[i]);
            }
        }
    }

    /// `spread` bounds the distance from a snapped point to any true set
    /// point it represents (2 r_net for products, r_net for translates).
    fn finish(self, net: &Arc<Net>, spread: f64) -> CellSet {
        let r_net = net.cell_radius;
        let marked: Vec<usize> = (0..net.len()).filter(|&i| self.touched[i]).collect();
        let rows: Vec<(Vec<usize>, Vec<(usize, f64)>)> = marked
            .par_iter()
            .map(|&c| {
                // outer: cells whose Voronoi can intersect the spread ball
                let radius = spread + r_net + self.dsnap[c];
                let outer = net.within(&net.centers[c], radius);
                // inner: cells whose covering ball fits inside B(c, v)
                let mut inner = Vec::new();
                if self.v[c] >= r_net {
                    for i in net.within(&net.centers[c], self.v[c] - r_net) {
                        let d = net.group.distance(&net.centers[c], &net.centers[i]);
                        inner.push((i, self.v[c] - d));
                    }
                }
                (outer, inner)
            })
            .collect();
        let mut out = CellSet::empty(net);
        for (outer, inner) in rows {
            for i in outer {
                out.outer[i] = true;
            }
            for (i, d) in inner {
                out.inner_depth[i] = out.inner_depth[i].max(d);
            }
        }
        // inner cells are always outer
        for i in 0..net.len() {
            if out.inner_depth[i] >= r_net {
                out.outer[i] = true;
            }
        }
        out
    }
}

fn write_rle<W: Write>(w: &mut W, bits: &[bool]) -> Result<()> {
    let mut runs: Vec<u32> = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    w.write_all(&(runs.len() as u32).to_le_bytes())?;
    for r in runs {
        w.write_all(&r.to_le_bytes())?;
    }
    Ok(())
}

fn read_rle<R: Read>(r: &mut R, cells: usize) -> Result<Vec<bool>> {
    let mut n = [0u8; 4];
    r.read_exact(&mut n)?;
    let n = u32::from_le_bytes(n) as usize;
    let mut bits = Vec::with_capacity(cells);
    let mut current = false;
    for _ in 0..n {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        bits.extend(std::iter::repeat(current).take(len));
        current = !current;
    }
    if bits.len() != cells {
        return Err(Error::Invalid("run lengths do not match cell count".into()));
    }
    Ok(bits)
}
