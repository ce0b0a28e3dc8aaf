//! Price-side adjustments.
//!
//! Nominal household income is divided by up to three normalizers: the CPI
//! factor rebased to the reference year, the regional price parity (percent of
//! national, so divided by 100), and the square-root equivalence scale. Parity
//! is only published for recent years; earlier years are predicted backwards
//! one year at a time from a fixed-effects regression on gross rent and the
//! next year's parity.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{effective_size, HouseholdRecord, PriceTables, StateId, Variant, YearRange};

pub const DEFLATOR_SCHEMA_VERSION: &str = "1.0.0";
pub const REFERENCE_YEAR: i32 = 2019;

/// Rebases a CPI series so that `reference_year` maps to exactly 1.
pub fn rebase_cpi(cpi: &BTreeMap<i32, f64>, reference_year: i32) -> Result<BTreeMap<i32, f64>> {
    let base = *cpi
        .get(&reference_year)
        .ok_or(Error::MissingReferenceYear {
            year: reference_year,
        })?;
    Ok(cpi
        .iter()
        .map(|(&year, &value)| (year, value / base))
        .collect())
}

/// Fills every year in `years` for each state: linear between adjacent
/// observations, flat beyond the first and last observation.
pub fn interpolate_rent(
    sparse: &BTreeMap<(StateId, i32), f64>,
    years: YearRange,
) -> Result<BTreeMap<(StateId, i32), f64>> {
    let mut by_state: BTreeMap<StateId, Vec<(i32, f64)>> = BTreeMap::new();
    for (&(state, year), &rent) in sparse {
        by_state.entry(state).or_default().push((year, rent));
    }

    let mut dense = BTreeMap::new();
    for (state, knots) in by_state {
        if knots.len() < 2 {
            return Err(Error::SparseRent {
                state: state.code().to_string(),
                count: knots.len(),
            });
        }
        // BTreeMap iteration already sorted knots by year
        let (first_year, first_rent) = knots[0];
        let (last_year, last_rent) = knots[knots.len() - 1];
        for year in years.iter() {
            let rent = if year <= first_year {
                first_rent
            } else if year >= last_year {
                last_rent
            } else {
                let hi = knots.partition_point(|&(y, _)| y < year);
                let (y1, r1) = knots[hi];
                if y1 == year {
                    r1
                } else {
                    let (y0, r0) = knots[hi - 1];
                    let t = f64::from(year - y0) / f64::from(y1 - y0);
                    r0 + t * (r1 - r0)
                }
            };
            dense.insert((state, year), rent);
        }
        // observed cells outside `years` are kept verbatim so leads stay available
        for (year, rent) in knots {
            dense.entry((state, year)).or_insert(rent);
        }
    }
    Ok(dense)
}

/// One regression row: parity in `year` explained by rent in `year` and
/// `year + 1` and parity in `year + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackcastRow {
    pub state: StateId,
    pub year: i32,
    pub rent: f64,
    pub rent_lead: f64,
    pub rpp: f64,
    pub rpp_lead: f64,
}

/// Rows for every (state, year) where parity is observed in both `year` and
/// `year + 1` and dense rent covers both years.
pub fn backcast_panel(
    rent_dense: &BTreeMap<(StateId, i32), f64>,
    rpp_observed: &BTreeMap<(StateId, i32), f64>,
) -> Vec<BackcastRow> {
    rpp_observed
        .iter()
        .filter_map(|(&(state, year), &rpp)| {
            let rpp_lead = *rpp_observed.get(&(state, year + 1))?;
            let rent = *rent_dense.get(&(state, year))?;
            let rent_lead = *rent_dense.get(&(state, year + 1))?;
            Some(BackcastRow {
                state,
                year,
                rent,
                rent_lead,
                rpp,
                rpp_lead,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub r_squared: f64,
    pub residual_sd: f64,
    pub n: usize,
    pub parameters: usize,
}

/// Fitted parity model. The reference state's fixed effect is pinned to zero
/// and absorbed into the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackcastModel {
    pub alpha: f64,
    pub beta_rent: f64,
    pub beta_rent_lead: f64,
    pub beta_rpp_lead: f64,
    pub reference_state: StateId,
    pub fixed_effects: BTreeMap<StateId, f64>,
    pub diagnostics: FitDiagnostics,
}

impl BackcastModel {
    pub fn fixed_effect(&self, state: StateId) -> Option<f64> {
        self.fixed_effects.get(&state).copied()
    }

    pub fn predict(&self, state: StateId, rent: f64, rent_lead: f64, rpp_lead: f64) -> Option<f64> {
        let fe = self.fixed_effect(state)?;
        Some(
            self.alpha
                + self.beta_rent * rent
                + self.beta_rent_lead * rent_lead
                + self.beta_rpp_lead * rpp_lead
                + fe,
        )
    }
}

/// Least-squares solution by Householder QR.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub r_squared: f64,
    pub residual_sd: f64,
}

/// Relative size below which a column's QR pivot counts as zero.
const RANK_TOLERANCE: f64 = 1e-10;

pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    debug_assert_eq!(names.len(), p);
    debug_assert_eq!(y.len(), n);
    if n < p {
        return Err(Error::RankDeficient {
            columns: names[n..].to_vec(),
        });
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..p)
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOLERANCE * norm
        })
        .map(|j| names[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }

    let qty = qr.q().transpose() * y;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let residuals = y - x * &coefficients;

    let sse = residuals.norm_squared();
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    let residual_sd = if n > p {
        (sse / (n - p) as f64).sqrt()
    } else {
        0.0
    };
    Ok(OlsFit {
        coefficients,
        residuals,
        r_squared,
        residual_sd,
    })
}

/// Column layout of the backcast design matrix.
fn design(rows: &[BackcastRow]) -> (DMatrix<f64>, DVector<f64>, Vec<String>, Vec<StateId>) {
    let mut states: Vec<StateId> = rows.iter().map(|r| r.state).collect();
    states.sort_by_key(|s| s.code());
    states.dedup();
    // reference state = alphabetically first postal code
    let dummies = &states[1.min(states.len())..];

    let mut names: Vec<String> = ["intercept", "rent", "rent_lead", "rpp_lead"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(dummies.iter().map(|s| format!("fe[{}]", s.code())));

    let p = names.len();
    let x = DMatrix::from_fn(rows.len(), p, |i, j| {
        let row = &rows[i];
        match j {
            0 => 1.0,
            1 => row.rent,
            2 => row.rent_lead,
            3 => row.rpp_lead,
            _ => {
                if dummies[j - 4] == row.state {
                    1.0
                } else {
                    0.0
                }
            }
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.rpp));
    (x, y, names, states)
}

pub fn fit_backcast(rows: &[BackcastRow]) -> Result<BackcastModel> {
    if rows.is_empty() {
        return Err(Error::Rpp("no rows with observed parity and lead".into()));
    }
    let (x, y, names, states) = design(rows);
    let fit = ols(&x, &y, &names)?;
    let c = &fit.coefficients;

    let reference_state = states[0];
    let mut fixed_effects = BTreeMap::new();
    fixed_effects.insert(reference_state, 0.0);
    for (i, &state) in states.iter().enumerate().skip(1) {
        fixed_effects.insert(state, c[3 + i]);
    }

    Ok(BackcastModel {
        alpha: c[0],
        beta_rent: c[1],
        beta_rent_lead: c[2],
        beta_rpp_lead: c[3],
        reference_state,
        fixed_effects,
        diagnostics: FitDiagnostics {
            r_squared: fit.r_squared,
            residual_sd: fit.residual_sd,
            n: rows.len(),
            parameters: names.len(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellSource {
    Observed,
    Backcast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RppCell {
    pub value: f64,
    pub source: CellSource,
}

/// Observed parity plus recursive backward predictions down to `years.first`.
/// Observed cells pass through untouched.
pub fn backcast_rpp(
    model: &BackcastModel,
    rent_dense: &BTreeMap<(StateId, i32), f64>,
    rpp_observed: &BTreeMap<(StateId, i32), f64>,
    rpp_observed_from: i32,
    years: YearRange,
) -> Result<BTreeMap<(StateId, i32), RppCell>> {
    let mut full: BTreeMap<(StateId, i32), RppCell> = rpp_observed
        .iter()
        .filter(|((_, y), _)| years.contains(*y))
        .map(|(&k, &value)| {
            (
                k,
                RppCell {
                    value,
                    source: CellSource::Observed,
                },
            )
        })
        .collect();

    let mut states: Vec<StateId> = rpp_observed.keys().map(|&(s, _)| s).collect();
    states.dedup();

    for state in states {
        for year in (years.first..rpp_observed_from).rev() {
            if full.contains_key(&(state, year)) {
                continue;
            }
            let rpp_lead = full
                .get(&(state, year + 1))
                .map(|c| c.value)
                .or_else(|| rpp_observed.get(&(state, year + 1)).copied())
                .ok_or(Error::MissingDeflator {
                    state: state.code().to_string(),
                    year: year + 1,
                    what: "parity",
                })?;
            let rent = *rent_dense.get(&(state, year)).ok_or(Error::MissingDeflator {
                state: state.code().to_string(),
                year,
                what: "rent",
            })?;
            let rent_lead = *rent_dense
                .get(&(state, year + 1))
                .ok_or(Error::MissingDeflator {
                    state: state.code().to_string(),
                    year: year + 1,
                    what: "rent",
                })?;
            let value = model
                .predict(state, rent, rent_lead, rpp_lead)
                .ok_or(Error::MissingDeflator {
                    state: state.code().to_string(),
                    year,
                    what: "fixed effect",
                })?;
            full.insert(
                (state, year),
                RppCell {
                    value,
                    source: CellSource::Backcast,
                },
            );
        }
    }
    Ok(full)
}

/// Rebased CPI, dense rent and parity covering `years`. Without `backcast`,
/// parity exists only from the first observed year on.
pub fn build_deflators(prices: &PriceTables, years: YearRange, backcast: bool) -> Result<DeflatorSet> {
    let cpi = rebase_cpi(&prices.cpi, REFERENCE_YEAR)?;
    let observed: BTreeMap<(StateId, i32), f64> = prices
        .rpp
        .iter()
        .filter(|((_, y), _)| *y >= prices.rpp_observed_from)
        .map(|(&k, &v)| (k, v))
        .collect();
    let last_observed = observed.keys().map(|&(_, y)| y).max().unwrap_or(years.last);
    let span = YearRange::new(
        years.first.min(prices.rpp_observed_from),
        years.last.max(last_observed),
    );
    let rent = interpolate_rent(&prices.rent, span)?;

    let (rpp, model) = if backcast {
        let model = fit_backcast(&backcast_panel(&rent, &observed))?;
        let rpp = backcast_rpp(&model, &rent, &observed, prices.rpp_observed_from, span)?;
        (rpp, Some(model))
    } else {
        let rpp = observed
            .iter()
            .map(|(&k, &value)| {
                let source = CellSource::Observed;
                (k, RppCell { value, source })
            })
            .collect();
        (rpp, None)
    };
    Ok(DeflatorSet {
        reference_year: REFERENCE_YEAR,
        cpi,
        rpp,
        rent,
        model,
    })
}

/// Everything `adjust_income` needs, computed once per run.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflatorSet {
    pub reference_year: i32,
    pub cpi: BTreeMap<i32, f64>,
    pub rpp: BTreeMap<(StateId, i32), RppCell>,
    pub rent: BTreeMap<(StateId, i32), f64>,
    pub model: Option<BackcastModel>,
}

impl DeflatorSet {
    /// Years in `years` for which every state in `states` has a parity cell.
    pub fn rpp_years(&self, states: &[StateId], years: YearRange) -> Vec<i32> {
        years
            .iter()
            .filter(|&y| states.iter().all(|&s| self.rpp.contains_key(&(s, y))))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DeflatorDocument::from(self);
        let mut out = serde_json::to_string_pretty(&doc)?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DeflatorDocument = serde_json::from_str(text)?;
        if doc.schema_version.split('.').next() != DEFLATOR_SCHEMA_VERSION.split('.').next() {
            return Err(Error::Schema(format!(
                "deflator schema {} is not compatible with {}",
                doc.schema_version, DEFLATOR_SCHEMA_VERSION
            )));
        }
        Ok(DeflatorSet {
            reference_year: doc.reference_year,
            cpi: doc.cpi.into_iter().map(|c| (c.year, c.factor)).collect(),
            rpp: doc
                .rpp
                .into_iter()
                .map(|c| {
                    (
                        (c.state, c.year),
                        RppCell {
                            value: c.value,
                            source: c.source,
                        },
                    )
                })
                .collect(),
            rent: doc
                .rent
                .into_iter()
                .map(|c| ((c.state, c.year), c.rent))
                .collect(),
            model: doc.model,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CpiRow {
    year: i32,
    factor: f64,
}

#[derive(Serialize, Deserialize)]
struct RppRow {
    state: StateId,
    year: i32,
    value: f64,
    source: CellSource,
}

#[derive(Serialize, Deserialize)]
struct RentRow {
    state: StateId,
    year: i32,
    rent: f64,
}

#[derive(Serialize, Deserialize)]
struct DeflatorDocument {
    schema_version: String,
    reference_year: i32,
    cpi: Vec<CpiRow>,
    rpp: Vec<RppRow>,
    rent: Vec<RentRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<BackcastModel>,
}

impl From<&DeflatorSet> for DeflatorDocument {
    fn from(d: &DeflatorSet) -> Self {
        DeflatorDocument {
            schema_version: DEFLATOR_SCHEMA_VERSION.to_string(),
            reference_year: d.reference_year,
            cpi: d
                .cpi
                .iter()
                .map(|(&year, &factor)| CpiRow { year, factor })
                .collect(),
            rpp: d
                .rpp
                .iter()
                .map(|(&(state, year), c)| RppRow {
                    state,
                    year,
                    value: c.value,
                    source: c.source,
                })
                .collect(),
            rent: d
                .rent
                .iter()
                .map(|(&(state, year), &rent)| RentRow { state, year, rent })
                .collect(),
            model: d.model.clone(),
        }
    }
}

/// Adjusted income: nominal income over the product of the variant's
/// active normalizers.
pub fn adjust_income(
    record: &HouseholdRecord,
    deflators: &DeflatorSet,
    variant: Variant,
) -> Result<f64> {
    let active = variant.normalizers();
    let mut divisor = 1.0;
    if active.cpi {
        divisor *= deflators
            .cpi
            .get(&record.year)
            .ok_or(Error::MissingDeflator {
                state: record.state.code().to_string(),
                year: record.year,
                what: "cpi",
            })?;
    }
    if active.rpp {
        let cell = deflators
            .rpp
            .get(&(record.state, record.year))
            .ok_or(Error::MissingDeflator {
                state: record.state.code().to_string(),
                year: record.year,
                what: "regional price parity",
            })?;
        divisor *= cell.value / 100.0;
    }
    if active.size {
        divisor *= effective_size(record.members);
    }
    Ok(record.income / divisor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sex;

    fn st(code: &str) -> StateId {
        StateId::from_code(code).unwrap()
    }

    #[test]
    fn rebase_divides_by_reference() {
        let cpi: BTreeMap<i32, f64> = [(2000, 1.304), (2019, 0.652)].into();
        let out = rebase_cpi(&cpi, 2019).unwrap();
        assert_eq!(out[&2019], 1.0);
        assert_eq!(out[&2000], 2.0);

        let same: BTreeMap<i32, f64> = [(1990, 0.652), (2019, 0.652)].into();
        assert_eq!(rebase_cpi(&same, 2019).unwrap()[&1990], 1.0);
    }

    #[test]
    fn rebase_requires_reference() {
        let cpi: BTreeMap<i32, f64> = [(2000, 1.0)].into();
        assert!(matches!(
            rebase_cpi(&cpi, 2019),
            Err(Error::MissingReferenceYear { year: 2019 })
        ));
    }

    #[test]
    fn rebase_scale_invariant() {
        let cpi: BTreeMap<i32, f64> = (1976..=2019)
            .map(|y| (y, 0.3 + 0.027 * f64::from(y - 1976)))
            .collect();
        let scaled: BTreeMap<i32, f64> = cpi.iter().map(|(&y, &v)| (y, v * 7.3)).collect();
        let a = rebase_cpi(&cpi, 2019).unwrap();
        let b = rebase_cpi(&scaled, 2019).unwrap();
        for (y, v) in &a {
            assert!((v - b[y]).abs() <= 4.0 * f64::EPSILON * v.abs(), "{y}");
        }
    }

    #[test]
    fn rent_midpoint_and_flat_ends() {
        let ca = st("CA");
        let sparse: BTreeMap<_, _> = [((ca, 1990), 500.0), ((ca, 2000), 700.0)].into();
        let dense = interpolate_rent(&sparse, YearRange::new(1976, 2019)).unwrap();
        assert_eq!(dense[&(ca, 1995)], 600.0);
        assert_eq!(dense[&(ca, 1976)], 500.0);
        assert_eq!(dense[&(ca, 2019)], 700.0);
        assert_eq!(dense.len(), 44);
    }

    #[test]
    fn rent_dense_passthrough() {
        let ny = st("NY");
        let sparse: BTreeMap<_, _> = (2000..=2010)
            .map(|y| ((ny, y), 800.0 + f64::from((y * 37) % 11)))
            .collect();
        let dense = interpolate_rent(&sparse, YearRange::new(2000, 2010)).unwrap();
        assert_eq!(dense, sparse);
    }

    #[test]
    fn rent_needs_two_knots() {
        let sparse: BTreeMap<_, _> = [((st("WY"), 2000), 500.0)].into();
        let err = interpolate_rent(&sparse, YearRange::default()).unwrap_err();
        assert!(err.to_string().contains("WY"), "{err}");
    }

    #[test]
    fn effective_size_values() {
        assert_eq!(effective_size(1), 1.0);
        assert_eq!(effective_size(4), 2.0);
        assert!((effective_size(26) - 5.0990).abs() < 1e-4);
        assert_eq!(format!("{:.2}", effective_size(26)), "5.10");
    }

    fn household(income: f64, year: i32, members: u32) -> HouseholdRecord {
        HouseholdRecord {
            year,
            state: st("CA"),
            income,
            weight: 1.0,
            members,
            age: 40,
            sex: Sex::Male,
            black: false,
            hispanic: false,
            edu_years: 12,
        }
    }

    fn deflators(cpi: f64, rpp: f64) -> DeflatorSet {
        DeflatorSet {
            reference_year: 2019,
            cpi: [(2000, cpi)].into(),
            rpp: [(
                (st("CA"), 2000),
                RppCell {
                    value: rpp,
                    source: CellSource::Observed,
                },
            )]
            .into(),
            rent: BTreeMap::new(),
            model: None,
        }
    }

    #[test]
    fn adjust_identity_normalizers() {
        let h = adjust_income(
            &household(100000.0, 2000, 1),
            &deflators(1.0, 100.0),
            Variant::Erhhrpp,
        )
        .unwrap();
        assert_eq!(h, 100000.0);
    }

    #[test]
    fn adjust_at_summary_means() {
        // S = 1.58 is not a square root of an integer, so evaluate the
        // normalizer product directly
        let d = deflators(1.18, 97.53);
        let rec = household(52343.81, 2000, 1);
        let without_size = adjust_income(&rec, &d, Variant::Rhhrpp).unwrap();
        let h = without_size / 1.58;
        let expected = 52343.81 / (1.18 * 0.9753 * 1.58);
        assert!((h - expected).abs() < 1e-9 * expected);
        assert!((h - 2.879e4).abs() < 5.0, "{h}");
    }

    #[test]
    fn adjust_rhh_only_cpi() {
        let h = adjust_income(&household(1000.0, 2000, 16), &deflators(2.0, 97.53), Variant::Rhh)
            .unwrap();
        assert_eq!(h, 500.0);
    }

    #[test]
    fn adjust_missing_cell() {
        let err = adjust_income(
            &household(1.0, 1999, 1),
            &deflators(1.0, 100.0),
            Variant::Rhh,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingDeflator { year: 1999, .. }));
    }

    #[test]
    fn ols_detects_collinear_column() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0, 1.0, 3.0, 6.0, 1.0, 4.0, 8.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let names = vec!["a".into(), "b".into(), "c".into()];
        match ols(&x, &y, &names) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["c".to_string()]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn pure_carry_back() {
        let ca = st("CA");
        let model = BackcastModel {
            alpha: 0.0,
            beta_rent: 0.0,
            beta_rent_lead: 0.0,
            beta_rpp_lead: 1.0,
            reference_state: ca,
            fixed_effects: [(ca, 0.0)].into(),
            diagnostics: FitDiagnostics {
                r_squared: 1.0,
                residual_sd: 0.0,
                n: 0,
                parameters: 0,
            },
        };
        let years = YearRange::new(2000, 2010);
        let rent: BTreeMap<_, _> = years.iter().map(|y| ((ca, y), 700.0 + f64::from(y))).collect();
        let observed: BTreeMap<_, _> = [((ca, 2008), 103.0), ((ca, 2009), 104.0), ((ca, 2010), 105.0)].into();
        let full = backcast_rpp(&model, &rent, &observed, 2008, years).unwrap();
        for y in 2000..2008 {
            let cell = full[&(ca, y)];
            assert_eq!(cell.value, 103.0);
            assert_eq!(cell.source, CellSource::Backcast);
        }
        assert_eq!(full[&(ca, 2009)].source, CellSource::Observed);
        assert_eq!(full.len(), years.len());
    }

    #[test]
    fn deflator_json_round_trip() {
        let d = deflators(1.234567890123, 97.5300000001);
        let back = DeflatorSet::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
