//! The `KIQT` binary slice format.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                                            |
//! |-------:|-----:|--------------------------------------------------|
//! | 0      | 4    | magic `KIQT`                                     |
//! | 4      | 2    | version, `u16` = 1                               |
//! | 6      | 1    | domain tag, 0 = image, 1 = k-space, 2 = magnitude |
//! | 7      | 1    | channel count, 1 or 2                            |
//! | 8      | 4    | height, `u32`                                    |
//! | 12     | 4    | width, `u32`                                     |
//! | 16     | 8    | scale, `f64`                                     |
//! | 24     | ..   | row-major `f32` planes, real before imaginary    |

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{check_dims, ComplexSlice, Domain, MagnitudeSlice};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KIQT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

const TAG_IMAGE: u8 = 0;
const TAG_KSPACE: u8 = 1;
const TAG_MAGNITUDE: u8 = 2;

/// Anything that can be written to or read back from a `KIQT` file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredSlice {
    Complex(ComplexSlice),
    Magnitude(MagnitudeSlice),
    /// A single real plane tagged with a domain, e.g. a sampling mask.
    Plane {
        domain: Domain,
        data: Array2<f32>,
        scale: f64,
    },
}

impl From<ComplexSlice> for StoredSlice {
    fn from(s: ComplexSlice) -> Self {
        StoredSlice::Complex(s)
    }
}

impl From<MagnitudeSlice> for StoredSlice {
    fn from(s: MagnitudeSlice) -> Self {
        StoredSlice::Magnitude(s)
    }
}

impl StoredSlice {
    pub fn into_complex(self) -> Result<ComplexSlice> {
        match self {
            StoredSlice::Complex(c) => Ok(c),
            _ => Err(Error::Format {
                field: "channels",
                detail: "expected a two-channel complex slice".into(),
            }),
        }
    }

    pub fn into_magnitude(self) -> Result<MagnitudeSlice> {
        match self {
            StoredSlice::Magnitude(m) => Ok(m),
            _ => Err(Error::Format {
                field: "domain",
                detail: "expected a magnitude slice".into(),
            }),
        }
    }

    fn header_fields(&self) -> (u8, u8, usize, usize, f64) {
        match self {
            StoredSlice::Complex(c) => {
                let (h, w) = c.dim();
                (domain_tag(c.domain()), 2, h, w, c.scale())
            }
            StoredSlice::Magnitude(m) => {
                let (h, w) = m.dim();
                (TAG_MAGNITUDE, 1, h, w, m.scale())
            }
            StoredSlice::Plane {
                domain,
                data,
                scale,
            } => {
                let (h, w) = data.dim();
                (domain_tag(*domain), 1, h, w, *scale)
            }
        }
    }

    fn planes(&self) -> Vec<&Array2<f32>> {
        match self {
            StoredSlice::Complex(c) => vec![c.real(), c.imag()],
            StoredSlice::Magnitude(m) => vec![m.data()],
            StoredSlice::Plane { data, .. } => vec![data],
        }
    }

    /// Serializes to the exact on-disk byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (tag, channels, h, w, scale) = self.header_fields();
        let mut out = Vec::with_capacity(HEADER_LEN + usize::from(channels) * h * w * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(tag);
        out.push(channels);
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&scale.to_le_bytes());
        for plane in self.planes() {
            for v in plane.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format {
                field: "magic",
                detail: format!("expected \"KIQT\", found {:?}", &bytes[..bytes.len().min(4)]),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format {
                field: "header",
                detail: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format {
                field: "version",
                detail: format!("unsupported version {version}"),
            });
        }
        let tag = bytes[6];
        let channels = bytes[7];
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let scale = f64::from_le_bytes(bytes[16..24].try_into().unwrap());

        if tag > TAG_MAGNITUDE {
            return Err(Error::Format {
                field: "domain",
                detail: format!("unknown domain tag {tag}"),
            });
        }
        if !(channels == 1 || channels == 2) || (tag == TAG_MAGNITUDE && channels != 1) {
            return Err(Error::Format {
                field: "channels",
                detail: format!("channel count {channels} invalid for domain tag {tag}"),
            });
        }
        check_dims(h, w).map_err(|e| Error::Format {
            field: "dims",
            detail: e.to_string(),
        })?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Format {
                field: "scale",
                detail: format!("scale must be positive, found {scale}"),
            });
        }

        let plane_bytes = h * w * 4;
        let expected = plane_bytes * usize::from(channels);
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::Format {
                field: "payload",
                detail: format!(
                    "{} trailing bytes after declared payload",
                    payload.len() - expected
                ),
            });
        }
        let read_plane = |chunk: &[u8]| {
            let values: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Array2::from_shape_vec((h, w), values).expect("plane length checked above")
        };
        let first = read_plane(&payload[..plane_bytes]);

        let slice = match (tag, channels) {
            (TAG_MAGNITUDE, _) => StoredSlice::Magnitude(MagnitudeSlice::new(first, scale)?),
            (t, 2) => {
                let second = read_plane(&payload[plane_bytes..]);
                StoredSlice::Complex(ComplexSlice::new(first, second, tag_domain(t), scale)?)
            }
            (t, _) => StoredSlice::Plane {
                domain: tag_domain(t),
                data: first,
                scale,
            },
        };
        Ok(slice)
    }
}

fn domain_tag(d: Domain) -> u8 {
    match d {
        Domain::Image => TAG_IMAGE,
        Domain::Kspace => TAG_KSPACE,
    }
}

fn tag_domain(tag: u8) -> Domain {
    if tag == TAG_KSPACE {
        Domain::Kspace
    } else {
        Domain::Image
    }
}

pub fn write_slice(slice: &StoredSlice, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, slice.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_slice(path: impl AsRef<Path>) -> Result<StoredSlice> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    StoredSlice::from_bytes(&bytes)
}
