//! Daily L2 production: warehouse samples → filters → model → trackwise files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::files::{write_l2_day, ProductError, WriteMode};
use super::{compute_surface_flags, retrieval_suppressed, CoastIndex, L2Record, SurfaceFlagInputs};
use crate::conditioning::{apply_normalization, filter_samples, FilterConfig, FilterReport, NormStats};
use crate::container::WriteOutcome;
use crate::model::{Mode, Network};
use crate::warehouse::{Sample, WarehouseStore};
use crate::{Scalar, MISSING};

/// Everything inference needs besides the network.
#[derive(Debug, Clone)]
pub struct RetrievalContext {
    pub filter: FilterConfig,
    pub norm: NormStats,
    pub coast: CoastIndex,
}

/// Filters `samples` and runs the model on the survivors, in input order.
pub fn retrieve<S: Scalar>(
    net: &Network<S>,
    samples: Vec<Sample>,
    ctx: &RetrievalContext,
) -> Result<(Vec<L2Record>, FilterReport), ProductError> {
    let bad = |msg: String| ProductError::Corrupt { path: "<model>".into(), msg };
    if ctx.norm.feature_names() != net.config().ancillary_inputs {
        return Err(bad("normalization inputs do not match the network's ancillary inputs".into()));
    }
    let (kept, report) = filter_samples(samples, &ctx.filter);
    let bundles = kept.iter().map(|s| apply_normalization(s, &ctx.norm)).collect::<Result<Vec<_>, _>>().map_err(|e| bad(e.to_string()))?;
    let sm = net.forward(&bundles, Mode::Infer).map_err(|e| bad(e.to_string()))?;
    let records = kept
        .into_iter()
        .zip(sm)
        .map(|(s, v)| {
            let flag = SurfaceFlagInputs::from_ancillary(&s.anc, ctx.coast.distance_km(s.obs.sp))
                .map_or(0, |x| compute_surface_flags(&x));
            L2Record {
                timestamp: s.obs.timestamp,
                sp: s.obs.sp,
                sm: if retrieval_suppressed(flag) { MISSING } else { v },
                quality_flags: s.obs.quality_flags,
                spacecraft_id: s.obs.spacecraft_id,
                prn: s.obs.prn,
                incidence_deg: s.obs.incidence_deg,
                ddm_snr: s.obs.ddm_snr,
                sp_rx_gain: s.obs.sp_rx_gain,
                reflectivity_db: s.metrics.reflectivity_db,
                anc: s.anc,
                surface_flag: flag,
                target_sm: s.target_sm,
            }
        })
        .collect();
    Ok((records, report))
}

#[derive(Debug, Clone)]
pub struct L2DayOutput {
    pub satellite: u8,
    pub path: PathBuf,
    pub outcome: WriteOutcome,
    pub report: FilterReport,
    pub records: Vec<L2Record>,
}

/// One trackwise file per satellite present in the warehouse for `day`.
#[allow(clippy::too_many_arguments)]
pub fn generate_l2_day<S: Scalar>(
    net: &Network<S>,
    warehouse: &WarehouseStore,
    day: NaiveDate,
    ctx: &RetrievalContext,
    version: &str,
    root: &Path,
    mode: WriteMode,
    attrs: &BTreeMap<String, String>,
) -> Result<Vec<L2DayOutput>, ProductError> {
    let mut out = Vec::new();
    for sat in warehouse.satellites_for(day) {
        let samples = warehouse
            .read_day(sat, day)
            .map_err(|e| ProductError::Corrupt { path: warehouse.path(sat, day).display().to_string(), msg: e.to_string() })?
            .unwrap_or_default();
        let (records, report) = retrieve(net, samples, ctx)?;
        let (path, outcome) = write_l2_day(&records, sat, day, version, root, mode, attrs)?;
        out.push(L2DayOutput { satellite: sat, path, outcome, report, records });
    }
    Ok(out)
}
