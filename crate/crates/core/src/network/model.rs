use alloc::format;
use alloc::vec::Vec;

use super::config::{ModelConfig, SCALES};
use super::params::Bound;
use crate::attention::{
    rwam_apply, swam_apply, AttentionConfig, AttnEntry, AttnRecord, Branch, RwamWeights, SwamWeights,
};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::ops::{Conv2dSpec, LN_EPS};
use crate::windowing::{crop_index, pad_edge_index, round_up};

fn conv<'t>(x: Var<'t>, p: &Bound<'t>, prefix: &str, spec: Conv2dSpec) -> Result<Var<'t>> {
    x.conv2d(p.get(&format!("{prefix}.weight"))?, Some(p.get(&format!("{prefix}.bias"))?), spec)
}

fn norm<'t>(x: Var<'t>, p: &Bound<'t>, prefix: &str) -> Result<Var<'t>> {
    x.layer_norm(p.get(&format!("{prefix}.weight"))?, p.get(&format!("{prefix}.bias"))?, LN_EPS)
}

fn pair<'t>(p: &Bound<'t>, prefix: &str) -> Result<(Var<'t>, Var<'t>)> {
    Ok((p.get(&format!("{prefix}.weight"))?, p.get(&format!("{prefix}.bias"))?))
}

fn optional_pair<'t>(p: &Bound<'t>, prefix: &str) -> Option<(Var<'t>, Var<'t>)> {
    pair(p, prefix).ok()
}

/// Gated feed-forward network: LN, expand, depthwise-conv/GELU gate,
/// channel attention, project back. `prefix` names the block.
pub fn ffn_forward<'t>(x: Var<'t>, p: &Bound<'t>, prefix: &str) -> Result<Var<'t>> {
    let y = norm(x, p, &format!("{prefix}.norm2"))?;
    let y = conv(y, p, &format!("{prefix}.ffn.conv1"), Conv2dSpec::default())?;
    let ec = y.shape()[0] / 2;
    let (top, bottom) = (y.narrow0(0, ec)?, y.narrow0(ec, ec)?);
    let top = conv(top, p, &format!("{prefix}.ffn.dwconv"), Conv2dSpec::depthwise(ec, 1))?.gelu();
    let gated = top.mul(bottom)?;
    let pooled = conv(gated.mean_spatial()?, p, &format!("{prefix}.ffn.sca"), Conv2dSpec::default())?;
    let gated = gated.mul_channel(pooled)?;
    conv(gated, p, &format!("{prefix}.ffn.conv2"), Conv2dSpec::default())
}

/// Where attention traces of one block go, if anywhere.
pub struct Recorder<'a> {
    pub record: &'a mut AttnRecord,
    pub scale: usize,
}

/// LN, channel split, routed attention on the first half and shifted window
/// attention on the second, concatenation and 1×1 fusion.
pub fn irblock_forward<'t>(
    x: Var<'t>,
    p: &Bound<'t>,
    prefix: &str,
    cfg: &AttentionConfig,
    recorder: Option<Recorder<'_>>,
) -> Result<Var<'t>> {
    let c = x.shape()[0];
    if c % 2 != 0 {
        return Err(Error::config("block channels must be even"));
    }
    let y = norm(x, p, &format!("{prefix}.norm1"))?;
    let half = c / 2;
    let (a, b) = (y.narrow0(0, half)?, y.narrow0(half, half)?);
    let rw = RwamWeights {
        qkv: optional_pair(p, &format!("{prefix}.rwam.qkv")),
        proj: pair(p, &format!("{prefix}.rwam.proj"))?,
        candidate_bias: p.get(&format!("{prefix}.rwam.bias_table"))?,
        center_bias: p.get(&format!("{prefix}.rwam.center_bias"))?,
    };
    let sw = SwamWeights {
        qkv: optional_pair(p, &format!("{prefix}.swam.qkv")),
        proj: pair(p, &format!("{prefix}.swam.proj"))?,
        bias: p.get(&format!("{prefix}.swam.bias_table"))?,
    };
    let ra = rwam_apply(a, &rw, cfg, None)?;
    let sb = swam_apply(b, &sw, cfg)?;
    if let Some(r) = recorder {
        r.record.entries.extend(AttnEntry::from_trace(&ra.trace, r.scale, prefix, Branch::Routed));
        r.record.entries.extend(AttnEntry::from_trace(&sb.trace, r.scale, prefix, Branch::Shifted));
    }
    conv(Var::cat0(&[ra.out, sb.out])?, p, &format!("{prefix}.fuse"), Conv2dSpec::default())
}

/// `X = IRBlock(x) + x; Y = FFN(X) + X`.
pub fn block_forward<'t>(
    x: Var<'t>,
    p: &Bound<'t>,
    prefix: &str,
    cfg: &AttentionConfig,
    recorder: Option<Recorder<'_>>,
) -> Result<Var<'t>> {
    let x1 = irblock_forward(x, p, prefix, cfg, recorder)?.add(x)?;
    ffn_forward(x1, p, prefix)?.add(x1)
}

pub struct ModelOutput<'t> {
    pub restored: Var<'t>,
    /// Residual heads at `h/2`, `h/4`, `h/8`.
    pub msr: [Var<'t>; 3],
    pub record: Option<AttnRecord>,
    /// Padded working size.
    pub padded: (usize, usize),
}

fn stage<'t>(
    mut x: Var<'t>,
    p: &Bound<'t>,
    cfg: &ModelConfig,
    tag: &str,
    scale: usize,
    record: &mut Option<AttnRecord>,
) -> Result<Var<'t>> {
    for b in 0..cfg.depths[scale] {
        let recorder = record.as_mut().map(|r| Recorder { record: r, scale });
        x = block_forward(x, p, &format!("{tag}{scale}.b{b}"), &cfg.attention(scale, b), recorder)?;
    }
    Ok(x)
}

fn crop<'t>(x: Var<'t>, h: usize, w: usize) -> Result<Var<'t>> {
    let s = x.shape();
    if (s[1], s[2]) == (h, w) {
        return Ok(x);
    }
    x.gather(crop_index(s[0], s[1], s[2], h, w), &[s[0], h, w])
}

/// Runs the network on `img: [3, h, w]`.
pub fn model_forward<'t>(img: Var<'t>, p: &Bound<'t>, cfg: &ModelConfig, record: bool) -> Result<ModelOutput<'t>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim("model_forward", &s, &[3, 0, 0]));
    }
    let (h, w) = (s[1], s[2]);
    if h < cfg.window || w < cfg.window {
        return Err(Error::dim("model_forward", &s, &[3, cfg.window, cfg.window]));
    }
    let mult = cfg.pad_multiple();
    let (ph, pw) = (round_up(h, mult), round_up(w, mult));
    let padded = if (ph, pw) == (h, w) {
        img
    } else {
        img.gather(pad_edge_index(3, h, w, ph, pw), &[3, ph, pw])?
    };
    let mut rec = record.then(AttnRecord::default);

    let mut x = conv(padded, p, "intro", Conv2dSpec::new(1, 1))?;
    let mut skips = Vec::with_capacity(SCALES - 1);
    for scale in 0..SCALES {
        x = stage(x, p, cfg, "enc", scale, &mut rec)?;
        if scale + 1 < SCALES {
            skips.push(x);
            x = conv(x, p, &format!("down{scale}"), Conv2dSpec::new(2, 0))?;
        }
    }
    let mut heads = Vec::with_capacity(SCALES - 1);
    heads.push(conv(x, p, "msr3", Conv2dSpec::new(1, 1))?);
    for scale in (0..SCALES - 1).rev() {
        let up = conv(x, p, &format!("up{scale}"), Conv2dSpec::default())?.pixel_shuffle(2)?;
        let merged = Var::cat0(&[up, skips[scale]])?;
        x = conv(merged, p, &format!("fuse{scale}"), Conv2dSpec::default())?;
        x = stage(x, p, cfg, "dec", scale, &mut rec)?;
        if scale > 0 {
            heads.push(conv(x, p, &format!("msr{scale}"), Conv2dSpec::new(1, 1))?);
        }
    }
    let residual = conv(x, p, "ending", Conv2dSpec::new(1, 1))?;
    let restored = img.add(crop(residual, h, w)?)?;
    // heads were collected coarse to fine
    let mut msr = Vec::with_capacity(3);
    for (j, head) in heads.into_iter().rev().enumerate() {
        msr.push(crop(head, h >> (j + 1), w >> (j + 1))?);
    }
    Ok(ModelOutput {
        restored,
        msr: [msr[0], msr[1], msr[2]],
        record: rec,
        padded: (ph, pw),
    })
}
