//! Little-endian binary container for one scene's dataset.
//!
//! ```text
//! "MPCD" | version u32 | n_records u64 | L u32 | pov_res u32 | hm_res u32
//! hm_m_per_px f64 | stats 5×f64 | scene_seed u64 | config_digest [u8; 32]
//! n_tx u32 | tx tags u8×n_tx | n_rx u32 | rx tags u8×n_rx
//! heightmap f32×hm_res² | header checksum [u8; 8]
//! records...
//! ```
//!
//! A record is `link_id u64 | tx_region u32 | rx_region u32 | split u8 |
//! tx_pos 3×f64 | rx_pos 3×f64 | L×(present u8, 7×f64) | tof f64 | p_rx f64 |
//! tof_n f64 | p_rx_n f64 | L×(present u8, 9×f64) | tx_pov f32×12·r² | rx_pov f32×12·r²`.

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use super::{split::Split, DatasetError};
use crate::channel::{LinkChannel, MpcPath, NormStats, NormalizedLink, NormalizedSlot};
use crate::scene::{LINK_FLOOR_DB, POV_CHANNELS};

pub const MAGIC: [u8; 4] = *b"MPCD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub max_paths: usize,
    pub pov_resolution: usize,
    pub heightmap_resolution: usize,
    pub heightmap_m_per_px: f64,
    pub stats: NormStats,
    pub scene_seed: u64,
    pub config_digest: [u8; 32],
    pub tx_region_splits: Vec<Split>,
    pub rx_region_splits: Vec<Split>,
    /// Preprocessed heightmap, row-major.
    pub heightmap: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub link_id: u64,
    pub tx_region: u32,
    pub rx_region: u32,
    pub split: Split,
    pub link: LinkChannel,
    pub normalized: NormalizedLink,
    /// Preprocessed POV stacks, channel-major.
    pub tx_pov: Vec<f32>,
    pub rx_pov: Vec<f32>,
}

impl DatasetRecord {
    /// `[tx_x, tx_y, tx_z, rx_x, rx_y, rx_z]`
    pub fn coordinates(&self) -> [f64; 6] {
        let (t, r) = (self.link.tx_pos, self.link.rx_pos);
        [t[0], t[1], t[2], r[0], r[1], r[2]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, DatasetError> {
        let mut buf = Vec::new();
        write_to(&mut buf, self)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], expected_paths: Option<usize>) -> Result<Self, DatasetError> {
        parse(bytes, expected_paths)
    }
}

fn header_bytes(h: &DatasetHeader, n_records: usize) -> Result<Vec<u8>, DatasetError> {
    let mut w = Vec::new();
    w.write_all(&MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u64::<LE>(n_records as u64)?;
    w.write_u32::<LE>(h.max_paths as u32)?;
    w.write_u32::<LE>(h.pov_resolution as u32)?;
    w.write_u32::<LE>(h.heightmap_resolution as u32)?;
    w.write_f64::<LE>(h.heightmap_m_per_px)?;
    let s = &h.stats;
    for v in [s.mu_log, s.sigma_log, s.mu_rx, s.sigma_rx, s.window_s] {
        w.write_f64::<LE>(v)?;
    }
    w.write_u64::<LE>(h.scene_seed)?;
    w.write_all(&h.config_digest)?;
    for tags in [&h.tx_region_splits, &h.rx_region_splits] {
        w.write_u32::<LE>(tags.len() as u32)?;
        for t in tags {
            w.write_u8(*t as u8)?;
        }
    }
    if h.heightmap.len() != h.heightmap_resolution * h.heightmap_resolution {
        return Err(DatasetError::Invalid("heightmap size does not match its resolution".into()));
    }
    for v in &h.heightmap {
        w.write_f32::<LE>(*v)?;
    }
    let digest = Sha256::digest(&w);
    w.write_all(&digest[..8])?;
    Ok(w)
}

fn write_record<W: Write>(w: &mut W, r: &DatasetRecord, h: &DatasetHeader) -> Result<(), DatasetError> {
    let l = h.max_paths;
    let pov_len = POV_CHANNELS * h.pov_resolution * h.pov_resolution;
    if r.link.capacity() != l || r.normalized.slots.len() != l {
        return Err(DatasetError::Invalid(format!("record {} has the wrong slot count", r.link_id)));
    }
    if r.tx_pov.len() != pov_len || r.rx_pov.len() != pov_len {
        return Err(DatasetError::Invalid(format!("record {} has the wrong POV size", r.link_id)));
    }
    if r.link.rx_power_db() < LINK_FLOOR_DB {
        return Err(DatasetError::InvalidRecord {
            link_id: r.link_id,
            reason: format!("received power {:.2} dB is below the link floor", r.link.rx_power_db()),
        });
    }
    w.write_u64::<LE>(r.link_id)?;
    w.write_u32::<LE>(r.tx_region)?;
    w.write_u32::<LE>(r.rx_region)?;
    w.write_u8(r.split as u8)?;
    for v in r.link.tx_pos.iter().chain(&r.link.rx_pos) {
        w.write_f64::<LE>(*v)?;
    }
    for p in r.link.paths() {
        w.write_u8(p.present as u8)?;
        for v in [p.gain_re, p.gain_im, p.delay_s, p.aod_az_rad, p.aod_el_rad, p.aoa_az_rad, p.aoa_el_rad] {
            w.write_f64::<LE>(v)?;
        }
    }
    w.write_f64::<LE>(r.link.tof_s())?;
    w.write_f64::<LE>(r.link.rx_power_db())?;
    w.write_f64::<LE>(r.normalized.tof_n)?;
    w.write_f64::<LE>(r.normalized.rx_power_n)?;
    for s in &r.normalized.slots {
        w.write_u8(s.present as u8)?;
        let v = s.to_vector();
        for x in &v[..9] {
            w.write_f64::<LE>(*x)?;
        }
    }
    for v in r.tx_pov.iter().chain(&r.rx_pov) {
        w.write_f32::<LE>(*v)?;
    }
    Ok(())
}

fn write_to<W: Write>(w: &mut W, ds: &Dataset) -> Result<(), DatasetError> {
    w.write_all(&header_bytes(&ds.header, ds.records.len())?)?;
    for r in &ds.records {
        write_record(w, r, &ds.header)?;
    }
    Ok(())
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    parse(&std::fs::read(path)?, None)
}

/// Reads a file, rejecting it unless it stores exactly `max_paths` slots per link.
pub fn read_dataset_expecting(path: &Path, max_paths: usize) -> Result<Dataset, DatasetError> {
    parse(&std::fs::read(path)?, Some(max_paths))
}

fn truncated(e: std::io::Error) -> DatasetError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        DatasetError::Truncated
    } else {
        DatasetError::Io(e.to_string())
    }
}

fn parse(bytes: &[u8], expected_paths: Option<usize>) -> Result<Dataset, DatasetError> {
    let mut c = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    c.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(DatasetError::BadMagic(magic));
    }
    let version = c.read_u32::<LE>().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let (header, n_records) = read_header(&mut c).map_err(|e| match e {
        DatasetError::Io(_) => DatasetError::Truncated,
        other => other,
    })?;
    let header_end = c.position() as usize;
    let digest = Sha256::digest(&bytes[..header_end]);
    let mut stored = [0u8; 8];
    c.read_exact(&mut stored).map_err(truncated)?;
    if stored != digest[..8] {
        return Err(DatasetError::HeaderChecksum);
    }
    if let Some(l) = expected_paths {
        if header.max_paths != l {
            return Err(DatasetError::IncompatiblePathCount {
                expected: l,
                found: header.max_paths,
            });
        }
    }
    header.stats.validate().map_err(|e| DatasetError::Invalid(e.to_string()))?;
    let mut records = Vec::with_capacity(n_records.min(1 << 20));
    for _ in 0..n_records {
        records.push(read_record(&mut c, &header)?);
    }
    if (c.position() as usize) != bytes.len() {
        return Err(DatasetError::Invalid("trailing bytes after the last record".into()));
    }
    Ok(Dataset { header, records })
}

fn read_header(c: &mut Cursor<&[u8]>) -> Result<(DatasetHeader, usize), DatasetError> {
    let n_records = c.read_u64::<LE>().map_err(truncated)? as usize;
    let max_paths = c.read_u32::<LE>().map_err(truncated)? as usize;
    let pov_resolution = c.read_u32::<LE>().map_err(truncated)? as usize;
    let heightmap_resolution = c.read_u32::<LE>().map_err(truncated)? as usize;
    let heightmap_m_per_px = c.read_f64::<LE>().map_err(truncated)?;
    let mut s = [0.0; 5];
    for v in &mut s {
        *v = c.read_f64::<LE>().map_err(truncated)?;
    }
    let scene_seed = c.read_u64::<LE>().map_err(truncated)?;
    let mut config_digest = [0u8; 32];
    c.read_exact(&mut config_digest).map_err(truncated)?;
    let mut tags = [Vec::new(), Vec::new()];
    for t in &mut tags {
        let n = c.read_u32::<LE>().map_err(truncated)? as usize;
        if n > c.get_ref().len() {
            return Err(DatasetError::Truncated);
        }
        for _ in 0..n {
            let b = c.read_u8().map_err(truncated)?;
            t.push(Split::from_u8(b).ok_or_else(|| DatasetError::Invalid(format!("bad split tag {b}")))?);
        }
    }
    let hm_len = heightmap_resolution
        .checked_mul(heightmap_resolution)
        .filter(|n| n * 4 <= c.get_ref().len())
        .ok_or(DatasetError::Truncated)?;
    let mut heightmap = Vec::with_capacity(hm_len);
    for _ in 0..hm_len {
        heightmap.push(c.read_f32::<LE>().map_err(truncated)?);
    }
    let [tx_region_splits, rx_region_splits] = tags;
    Ok((
        DatasetHeader {
            max_paths,
            pov_resolution,
            heightmap_resolution,
            heightmap_m_per_px,
            stats: NormStats {
                mu_log: s[0],
                sigma_log: s[1],
                mu_rx: s[2],
                sigma_rx: s[3],
                window_s: s[4],
            },
            scene_seed,
            config_digest,
            tx_region_splits,
            rx_region_splits,
            heightmap,
        },
        n_records,
    ))
}

fn read_record(c: &mut Cursor<&[u8]>, h: &DatasetHeader) -> Result<DatasetRecord, DatasetError> {
    let f = |c: &mut Cursor<&[u8]>| c.read_f64::<LE>().map_err(truncated);
    let link_id = c.read_u64::<LE>().map_err(truncated)?;
    let tx_region = c.read_u32::<LE>().map_err(truncated)?;
    let rx_region = c.read_u32::<LE>().map_err(truncated)?;
    let tag = c.read_u8().map_err(truncated)?;
    let invalid = |msg: String| DatasetError::InvalidRecord { link_id, reason: msg };
    let split = Split::from_u8(tag).ok_or_else(|| invalid(format!("bad split tag {tag}")))?;
    let mut pos = [0.0; 6];
    for v in &mut pos {
        *v = f(c)?;
    }
    let mut paths = Vec::with_capacity(h.max_paths);
    for _ in 0..h.max_paths {
        let present = c.read_u8().map_err(truncated)? != 0;
        let mut v = [0.0; 7];
        for x in &mut v {
            *x = f(c)?;
        }
        paths.push(MpcPath {
            present,
            gain_re: v[0],
            gain_im: v[1],
            delay_s: v[2],
            aod_az_rad: v[3],
            aod_el_rad: v[4],
            aoa_az_rad: v[5],
            aoa_el_rad: v[6],
        });
    }
    let tof = f(c)?;
    let p_rx = f(c)?;
    let tof_n = f(c)?;
    let rx_power_n = f(c)?;
    let mut slots = Vec::with_capacity(h.max_paths);
    for _ in 0..h.max_paths {
        let present = c.read_u8().map_err(truncated)? != 0;
        let mut v = [0.0; 9];
        for x in &mut v {
            *x = f(c)?;
        }
        slots.push(NormalizedSlot {
            present,
            gain_re_n: v[0],
            gain_im_n: v[1],
            excess_delay_n: v[2],
            aod_unit: [v[3], v[4], v[5]],
            aoa_unit: [v[6], v[7], v[8]],
        });
    }
    let pov_len = POV_CHANNELS * h.pov_resolution * h.pov_resolution;
    let mut povs = [Vec::with_capacity(pov_len), Vec::with_capacity(pov_len)];
    for p in &mut povs {
        for _ in 0..pov_len {
            p.push(c.read_f32::<LE>().map_err(truncated)?);
        }
    }
    let [tx_pov, rx_pov] = povs;
    let tx_pos = [pos[0], pos[1], pos[2]];
    let rx_pos = [pos[3], pos[4], pos[5]];
    let link = LinkChannel::from_stored(paths, tx_pos, rx_pos, tof, p_rx).map_err(|e| invalid(e.to_string()))?;
    let normalized = NormalizedLink {
        slots,
        tof_n,
        rx_power_n,
    };
    normalized.check_invariants().map_err(|e| invalid(e.to_string()))?;
    let tagged = (
        h.tx_region_splits.get(tx_region as usize),
        h.rx_region_splits.get(rx_region as usize),
    );
    if tagged != (Some(&split), Some(&split)) {
        return Err(invalid("split tag disagrees with the region plan".into()));
    }
    if !tx_pov.iter().chain(&rx_pov).all(|v| v.is_finite()) {
        return Err(invalid("non-finite POV value".into()));
    }
    Ok(DatasetRecord {
        link_id,
        tx_region,
        rx_region,
        split,
        link,
        normalized,
        tx_pov,
        rx_pov,
    })
}
