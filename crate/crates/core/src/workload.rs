// SPDX-License-Identifier: Apache-2.0
//! CNN layer descriptions and their lowering to GEMM shapes.
//!
//! Workload documents are JSON:
//!
//! ```json
//! {"model": "m", "defaults": {"bz": 8, "nnz": 3, "act_sparsity": 0.5},
//!  "layers": [{"name": "c1", "kind": "conv", "h": 56, "w": 56, "cin": 64,
//!              "cout": 64, "k": 3, "s": 1, "p": 1}]}
//! ```
//!
//! Per-layer `nnz`, `bz`, `act_sparsity` and `dbb_exempt` override the
//! defaults.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dbb::SUPPORTED_BLOCK_SIZES;
use crate::im2col_unit::expected_magnification;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Pointwise,
    Fc,
    /// Per-channel convolution; not DBB-compressible, costed as dense work.
    Depthwise,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv => "conv",
            LayerKind::Pointwise => "pointwise",
            LayerKind::Fc => "fc",
            LayerKind::Depthwise => "depthwise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub bz: usize,
    pub nnz: usize,
    pub act_sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nnz: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bz: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act_sparsity: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub dbb_exempt: bool,
}

impl LayerShape {
    pub fn conv(name: &str, hw: usize, cin: usize, cout: usize, k: usize, s: usize, p: usize) -> Self {
        Self {
            name: name.into(),
            kind: if k == 1 { LayerKind::Pointwise } else { LayerKind::Conv },
            h: hw,
            w: hw,
            cin,
            cout,
            k,
            s,
            p,
            nnz: None,
            bz: None,
            act_sparsity: None,
            dbb_exempt: false,
        }
    }

    pub fn fc(name: &str, cin: usize, cout: usize) -> Self {
        Self {
            kind: LayerKind::Fc,
            ..Self::conv(name, 1, cin, cout, 1, 1, 0)
        }
    }

    pub fn output_hw(&self) -> Option<(usize, usize)> {
        let len = |x: usize| {
            let padded = x + 2 * self.p;
            (self.s > 0 && padded >= self.k).then(|| (padded - self.k) / self.s + 1)
        };
        Some((len(self.h)?, len(self.w)?))
    }

    /// Dense execution: exempt from pruning or not expressible as DBB.
    pub fn runs_dense(&self) -> bool {
        self.dbb_exempt || self.kind == LayerKind::Depthwise
    }
}

/// GEMM view of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GemmShape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Activation-SRAM read reduction of the IM2COL unit on the interior of
    /// this layer (1.0 when the unit cannot help).
    pub magnification: f64,
    pub im2col_eligible: bool,
}

impl GemmShape {
    pub fn macs(&self) -> u64 {
        (self.m * self.k * self.n) as u64
    }

    pub fn ops(&self) -> u64 {
        2 * self.macs()
    }
}

pub fn layer_to_gemm(layer: &LayerShape) -> Result<GemmShape> {
    check_geometry(layer)?;
    let (oh, ow) = layer.output_hw().expect("checked");
    let (k, n) = match layer.kind {
        LayerKind::Depthwise => (layer.k * layer.k, layer.cout),
        _ => (layer.k * layer.k * layer.cin, layer.cout),
    };
    let (magnification, im2col_eligible) = expected_magnification(layer.k, layer.s, true);
    Ok(GemmShape { m: oh * ow, k, n, magnification, im2col_eligible })
}

fn check_geometry(l: &LayerShape) -> Result<()> {
    let bad = |msg: String| Err(Error::BadGeometry(format!("layer {}: {msg}", l.name)));
    if l.h == 0 || l.w == 0 || l.cin == 0 || l.cout == 0 || l.k == 0 || l.s == 0 {
        return bad("dimensions, kernel and stride must be positive".into());
    }
    match l.kind {
        LayerKind::Pointwise if l.k != 1 => return bad(format!("pointwise layer has k={}", l.k)),
        LayerKind::Fc if (l.k, l.h, l.w, l.p) != (1, 1, 1, 0) => {
            return bad("fc layer must be 1x1 with k=1 and no padding".into())
        }
        LayerKind::Depthwise if l.cin != l.cout => {
            return bad(format!("depthwise layer maps {} to {} channels", l.cin, l.cout))
        }
        _ => {}
    }
    if l.output_hw().is_none() {
        return bad(format!("{}x{} input smaller than k={} with p={}", l.h, l.w, l.k, l.p));
    }
    Ok(())
}

/// Effective per-layer parameters after applying defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedLayer {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub gemm: GemmShape,
    pub weight_bz: usize,
    /// Equal to `weight_bz` for dense layers.
    pub weight_nnz: usize,
    pub act_sparsity: f64,
    pub dense: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub model: String,
    pub defaults: Defaults,
    pub layers: Vec<LayerShape>,
}

impl WorkloadSpec {
    pub fn new(model: &str, defaults: Defaults, layers: Vec<LayerShape>) -> Result<Self> {
        let spec = Self { model: model.into(), defaults, layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let v = |msg: String| Err(Error::Validation(msg));
        if self.layers.is_empty() {
            return v("workload has no layers".into());
        }
        check_sparsity(self.defaults.bz, self.defaults.nnz, self.defaults.act_sparsity, "defaults")?;
        for l in &self.layers {
            check_geometry(l)?;
            let bz = l.bz.unwrap_or(self.defaults.bz);
            let nnz = l.nnz.unwrap_or(self.defaults.nnz.min(bz));
            let act = l.act_sparsity.unwrap_or(self.defaults.act_sparsity);
            check_sparsity(bz, nnz, act, &l.name)?;
        }
        Ok(())
    }

    pub fn resolved(&self) -> Result<Vec<ResolvedLayer>> {
        self.layers
            .iter()
            .map(|l| {
                let bz = l.bz.unwrap_or(self.defaults.bz);
                let dense = l.runs_dense();
                let nnz = if dense { bz } else { l.nnz.unwrap_or(self.defaults.nnz.min(bz)) };
                Ok(ResolvedLayer {
                    name: l.name.clone(),
                    kind: l.kind,
                    kernel: l.k,
                    stride: l.s,
                    gemm: layer_to_gemm(l)?,
                    weight_bz: bz,
                    weight_nnz: nnz,
                    act_sparsity: l.act_sparsity.unwrap_or(self.defaults.act_sparsity),
                    dense,
                })
            })
            .collect()
    }

    /// Total multiply-accumulates over all layers.
    pub fn total_macs(&self) -> Result<u64> {
        self.layers.iter().map(|l| layer_to_gemm(l).map(|g| g.macs())).sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workload serializes")
    }
}

fn check_sparsity(bz: usize, nnz: usize, act: f64, what: &str) -> Result<()> {
    if !SUPPORTED_BLOCK_SIZES.contains(&bz) {
        return Err(Error::Validation(format!("{what}: unsupported bz {bz}")));
    }
    if nnz == 0 || nnz > bz {
        return Err(Error::Validation(format!("{what}: nnz {nnz} outside 1..={bz}")));
    }
    if !(0.0..=1.0).contains(&act) {
        return Err(Error::Validation(format!("{what}: activation sparsity {act} outside [0, 1]")));
    }
    Ok(())
}

pub fn load_workload(path: &Path) -> Result<WorkloadSpec> {
    WorkloadSpec::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DEFAULTS: Defaults = Defaults { bz: 8, nnz: 3, act_sparsity: 0.5 };

    #[test]
    fn gemm_examples() {
        let pw = layer_to_gemm(&LayerShape::conv("pw", 14, 256, 512, 1, 1, 0)).unwrap();
        assert_eq!((pw.m, pw.k, pw.n, pw.magnification), (196, 256, 512, 1.0));
        let c3 = layer_to_gemm(&LayerShape::conv("c3", 56, 64, 64, 3, 1, 1)).unwrap();
        assert_eq!((c3.m, c3.k, c3.n, c3.magnification), (3136, 576, 64, 3.0));
        let fc = layer_to_gemm(&LayerShape::fc("fc", 2048, 1000)).unwrap();
        assert_eq!((fc.m, fc.k, fc.n), (1, 2048, 1000));
        let s2 = layer_to_gemm(&LayerShape::conv("s2", 56, 64, 64, 3, 2, 1)).unwrap();
        assert_eq!((s2.m, s2.magnification, s2.im2col_eligible), (784, 1.0, false));
    }

    #[test]
    fn geometry_errors() {
        let mut pw = LayerShape::conv("pw", 14, 8, 8, 1, 1, 0);
        pw.k = 3;
        assert!(matches!(layer_to_gemm(&pw), Err(Error::BadGeometry(_))));
        assert!(layer_to_gemm(&LayerShape::conv("tiny", 2, 8, 8, 5, 1, 0)).is_err());
        assert!(layer_to_gemm(&LayerShape::conv("s0", 8, 8, 8, 3, 0, 1)).is_err());
    }

    #[test]
    fn minimal_document() {
        let text = r#"{"model": "m", "defaults": {"bz": 8, "nnz": 3, "act_sparsity": 0.5},
            "layers": [{"name": "c", "kind": "conv", "h": 8, "w": 8, "cin": 4, "cout": 4, "k": 3, "s": 1, "p": 1}]}"#;
        let spec = WorkloadSpec::from_json(text).unwrap();
        assert_eq!(spec.layers.len(), 1);
        let r = &spec.resolved().unwrap()[0];
        assert_eq!((r.weight_nnz, r.weight_bz, r.act_sparsity, r.dense), (3, 8, 0.5, false));
    }

    #[test]
    fn document_errors() {
        let over = r#"{"model": "m", "defaults": {"bz": 8, "nnz": 3, "act_sparsity": 0.5},
            "layers": [{"name": "c", "kind": "fc", "h": 1, "w": 1, "cin": 4, "cout": 4, "k": 1, "s": 1, "p": 0, "nnz": 9}]}"#;
        assert!(matches!(WorkloadSpec::from_json(over), Err(Error::Validation(_))));
        let missing = "{\"model\": \"m\",\n \"defaults\": {\"bz\": 8, \"nnz\": 3, \"act_sparsity\": 0.5},\n \"layers\": [{\"name\": \"c\"}]}";
        match WorkloadSpec::from_json(missing) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("kind"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let empty = r#"{"model": "m", "defaults": {"bz": 8, "nnz": 3, "act_sparsity": 0.5}, "layers": []}"#;
        assert!(matches!(WorkloadSpec::from_json(empty), Err(Error::Validation(_))));
    }

    #[test]
    fn exempt_and_depthwise_run_dense() {
        let mut first = LayerShape::conv("c1", 32, 3, 16, 3, 1, 1);
        first.dbb_exempt = true;
        let mut dw = LayerShape::conv("dw", 16, 16, 16, 3, 1, 1);
        dw.kind = LayerKind::Depthwise;
        let spec = WorkloadSpec::new("m", DEFAULTS, vec![first, dw]).unwrap();
        let r = spec.resolved().unwrap();
        assert!(r.iter().all(|l| l.dense && l.weight_nnz == 8));
        assert_eq!(r[1].gemm.k, 9);
    }

    fn arb_layer() -> impl Strategy<Value = LayerShape> {
        (
            1usize..40,
            1usize..64,
            1usize..64,
            prop::sample::select(vec![1usize, 3, 5]),
            1usize..3,
            0usize..3,
            prop::option::of(1usize..=8),
            prop::option::of(0.0f64..=1.0),
            any::<bool>(),
        )
            .prop_filter_map("window fits", |(hw, cin, cout, k, s, p, nnz, act, ex)| {
                let mut l = LayerShape::conv("l", hw + k, cin, cout, k, s, p);
                l.nnz = nnz;
                l.act_sparsity = act;
                l.dbb_exempt = ex;
                Some(l)
            })
    }

    proptest! {
        #[test]
        fn json_round_trip(layers in prop::collection::vec(arb_layer(), 1..6)) {
            let spec = WorkloadSpec::new("rt", DEFAULTS, layers).unwrap();
            let back = WorkloadSpec::from_json(&spec.to_json()).unwrap();
            prop_assert_eq!(back, spec);
        }

        #[test]
        fn ops_are_twice_macs(l in arb_layer()) {
            let g = layer_to_gemm(&l).unwrap();
            let (oh, ow) = l.output_hw().unwrap();
            prop_assert_eq!(g.ops(), 2 * (oh * ow * l.k * l.k * l.cin * l.cout) as u64);
        }
    }
}
