//! Binary prompt file: `DPRM` header followed by little-endian f32 arrays.
//!
//! Layout: magic, version u32, task u8, h u32, w u32, border u32, d_emb u32, then
//! visual_sketch `(h, w, 3)`, visual_photo `(h, w, 3)` and textual `(77, d_emb)`,
//! all row-major. Fine-grained files store the shared prompt twice.

use std::path::Path;

use candle_core::{DType, Device};

use super::{PromptSet, TextualPrompt, VisualPrompt};
use crate::backbone::CONTEXT_LENGTH;
use crate::error::{Error, Result};
use crate::features::Task;

pub const DPRM_MAGIC: &[u8; 4] = b"DPRM";
pub const DPRM_VERSION: u32 = 1;

fn task_code(task: Task) -> u8 {
    match task {
        Task::Category => 0,
        Task::Finegrained => 1,
    }
}

fn chw_to_hwc(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * 3 + c] = v[(c * h + y) * w + x];
            }
        }
    }
    out
}

fn hwc_to_chw(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] = v[(y * w + x) * 3 + c];
            }
        }
    }
    out
}

pub(crate) fn encode(p: &PromptSet) -> Result<Vec<u8>> {
    let (h, w) = (p.height(), p.width());
    let mut out = Vec::new();
    out.extend_from_slice(DPRM_MAGIC);
    out.extend_from_slice(&DPRM_VERSION.to_le_bytes());
    out.push(task_code(p.task()));
    for v in [h, w, p.border(), p.d_emb()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let arrays = [
        chw_to_hwc(&p.visual_sketch().values()?, h, w),
        chw_to_hwc(&p.visual_photo().values()?, h, w),
        p.textual().values()?,
    ];
    for a in &arrays {
        for v in a {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("prompt file is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

pub(crate) fn decode(bytes: &[u8], dtype: DType, device: &Device) -> Result<PromptSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != DPRM_MAGIC {
        return Err(Error::Format("not a prompt file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != DPRM_VERSION {
        return Err(Error::Format(format!(
            "unsupported prompt file version {version}"
        )));
    }
    let task = match r.take(1)?[0] {
        0 => Task::Category,
        1 => Task::Finegrained,
        other => return Err(Error::Format(format!("unknown task code {other}"))),
    };
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let border = r.u32()? as usize;
    let d_emb = r.u32()? as usize;
    let sketch = hwc_to_chw(&r.f32s(3 * h * w)?, h, w);
    let photo = hwc_to_chw(&r.f32s(3 * h * w)?, h, w);
    let textual = r.f32s(CONTEXT_LENGTH * d_emb)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after prompt arrays",
            bytes.len() - r.pos
        )));
    }
    let visual_sketch = VisualPrompt::from_values(&sketch, h, w, border, dtype, device)?;
    let visual_photo = match task {
        Task::Category => Some(VisualPrompt::from_values(
            &photo, h, w, border, dtype, device,
        )?),
        Task::Finegrained => {
            if photo != sketch {
                return Err(Error::Format(
                    "fine-grained prompt file stores two different visual prompts".into(),
                ));
            }
            None
        }
    };
    let textual = TextualPrompt::from_values(&textual, d_emb, dtype, device)?;
    PromptSet::new(task, visual_sketch, visual_photo, textual)
}

pub fn write_prompts(prompts: &PromptSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode(prompts)?).map_err(|e| Error::io(path, e))
}

pub fn read_prompts(path: &Path, dtype: DType, device: &Device) -> Result<PromptSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, dtype, device)
}
