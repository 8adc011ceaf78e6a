use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    bytes_to_f64s, f64s_to_bytes, read_preamble, read_u32, read_u64, write_preamble, PersistError,
};
use crate::bc::{DemoDataset, DemoEpisode, DemoMeta};

pub const DATASET_MAGIC: &[u8; 8] = b"RTRRLDEM";
pub const DATASET_VERSION: u32 = 1;
pub const EPISODE_TAG: &[u8; 4] = b"EPIS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub meta: DemoMeta,
    pub episodes: usize,
    /// Width of each raster row, 0 when the dataset carries none.
    pub raster_dim: usize,
}

fn episode_bytes(ep: &DemoEpisode) -> Vec<u8> {
    let mut buf = Vec::new();
    for o in &ep.observations {
        f64s_to_bytes(o, &mut buf);
    }
    for a in &ep.actions {
        f64s_to_bytes(a, &mut buf);
    }
    if let Some(rs) = &ep.rasters {
        for r in rs {
            f64s_to_bytes(r, &mut buf);
        }
    }
    buf
}

pub fn write_dataset<W: Write>(w: &mut W, ds: &DemoDataset) -> Result<(), PersistError> {
    ds.validate().map_err(PersistError::Invalid)?;
    let raster_dim = ds
        .episodes
        .iter()
        .find_map(|e| e.rasters.as_ref().and_then(|r| r.first()).map(Vec::len))
        .unwrap_or(0);
    let header = DatasetHeader {
        format_version: DATASET_VERSION,
        meta: ds.meta.clone(),
        episodes: ds.episodes.len(),
        raster_dim,
    };
    write_preamble(w, DATASET_MAGIC, DATASET_VERSION, &header)?;
    for (i, ep) in ds.episodes.iter().enumerate() {
        let rd = if ep.rasters.is_some() { raster_dim } else { 0 };
        if let Some(bad) = ep.rasters.iter().flatten().find(|r| r.len() != raster_dim) {
            return Err(PersistError::EpisodeDim {
                episode: i,
                what: "raster",
                expected: raster_dim,
                got: bad.len(),
            });
        }
        w.write_all(EPISODE_TAG)?;
        w.write_all(&(ep.len() as u64).to_le_bytes())?;
        w.write_all(&(ds.meta.obs_dim as u32).to_le_bytes())?;
        w.write_all(&(ds.meta.action_dim as u32).to_le_bytes())?;
        w.write_all(&(rd as u32).to_le_bytes())?;
        let body = episode_bytes(ep);
        w.write_all(&body)?;
        w.write_all(&crc32fast::hash(&body).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &DemoDataset) -> Result<(), PersistError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

/// Streaming reader yielding one episode at a time.
pub struct DemoReader<R: Read> {
    inner: R,
    header: DatasetHeader,
    next: usize,
}

impl DemoReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DemoReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PersistError> {
        let header: DatasetHeader =
            read_preamble(&mut inner, DATASET_MAGIC, DATASET_VERSION, "dataset")?;
        Ok(Self {
            inner,
            header,
            next: 0,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn read_episode(&mut self) -> Result<DemoEpisode, PersistError> {
        let episode = self.next;
        let trunc = |e: std::io::Error| {
            if e.kind() == ErrorKind::UnexpectedEof {
                PersistError::Truncated { episode }
            } else {
                PersistError::Io(e)
            }
        };
        let r = &mut self.inner;
        let mut tag = [0u8; 4];
        r.read_exact(&mut tag).map_err(trunc)?;
        if &tag != EPISODE_TAG {
            return Err(PersistError::Invalid(format!(
                "episode {episode}: bad block tag"
            )));
        }
        let steps = read_u64(r).map_err(trunc)? as usize;
        let obs_dim = read_u32(r).map_err(trunc)? as usize;
        let action_dim = read_u32(r).map_err(trunc)? as usize;
        let raster_dim = read_u32(r).map_err(trunc)? as usize;
        let meta = &self.header.meta;
        if obs_dim != meta.obs_dim {
            return Err(PersistError::EpisodeDim {
                episode,
                what: "observation",
                expected: meta.obs_dim,
                got: obs_dim,
            });
        }
        if action_dim != meta.action_dim {
            return Err(PersistError::EpisodeDim {
                episode,
                what: "action",
                expected: meta.action_dim,
                got: action_dim,
            });
        }
        if raster_dim != 0 && raster_dim != self.header.raster_dim {
            return Err(PersistError::EpisodeDim {
                episode,
                what: "raster",
                expected: self.header.raster_dim,
                got: raster_dim,
            });
        }
        let values = steps
            .checked_mul(obs_dim + action_dim + raster_dim)
            .and_then(|v| v.checked_mul(8))
            .filter(|&v| v <= 1 << 34)
            .ok_or_else(|| {
                PersistError::Invalid(format!("episode {episode}: implausible length {steps}"))
            })?;
        let mut body = vec![0u8; values];
        r.read_exact(&mut body).map_err(trunc)?;
        let crc = read_u32(r).map_err(trunc)?;
        if crc32fast::hash(&body) != crc {
            return Err(PersistError::EpisodeChecksum { episode });
        }
        let floats = bytes_to_f64s(&body);
        let (obs, rest) = floats.split_at(steps * obs_dim);
        let (act, ras) = rest.split_at(steps * action_dim);
        let rows = |v: &[f64], d: usize| -> Vec<Vec<f64>> {
            if d == 0 {
                vec![Vec::new(); steps]
            } else {
                v.chunks_exact(d).map(<[f64]>::to_vec).collect()
            }
        };
        Ok(DemoEpisode {
            observations: rows(obs, obs_dim),
            actions: rows(act, action_dim),
            rasters: (raster_dim > 0).then(|| rows(ras, raster_dim)),
        })
    }
}

impl<R: Read> Iterator for DemoReader<R> {
    type Item = Result<DemoEpisode, PersistError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.episodes {
            return None;
        }
        let ep = self.read_episode();
        self.next += 1;
        if ep.is_err() {
            self.next = self.header.episodes;
        }
        Some(ep)
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DemoDataset, PersistError> {
    let mut reader = DemoReader::open(path)?;
    let meta = reader.header().meta.clone();
    let episodes = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    let ds = DemoDataset { meta, episodes };
    ds.validate().map_err(PersistError::Invalid)?;
    Ok(ds)
}
