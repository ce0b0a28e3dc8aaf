//! Domain types shared by every pipeline stage.
//!
//! States are keyed by FIPS code; the two-letter postal code is only used for
//! display and for picking the reference state of the backcast regression.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Default year range of the analysis (income years).
pub const DEFAULT_FIRST_YEAR: i32 = 1976;
pub const DEFAULT_LAST_YEAR: i32 = 2019;
pub const DEFAULT_RPP_OBSERVED_FROM: i32 = 2008;
pub const MAX_AGE: u8 = 120;

const STATES: [(u8, &str); 51] = [
    (1, "AL"),
    (2, "AK"),
    (4, "AZ"),
    (5, "AR"),
    (6, "CA"),
    (8, "CO"),
    (9, "CT"),
    (10, "DE"),
    (11, "DC"),
    (12, "FL"),
    (13, "GA"),
    (15, "HI"),
    (16, "ID"),
    (17, "IL"),
    (18, "IN"),
    (19, "IA"),
    (20, "KS"),
    (21, "KY"),
    (22, "LA"),
    (23, "ME"),
    (24, "MD"),
    (25, "MA"),
    (26, "MI"),
    (27, "MN"),
    (28, "MS"),
    (29, "MO"),
    (30, "MT"),
    (31, "NE"),
    (32, "NV"),
    (33, "NH"),
    (34, "NJ"),
    (35, "NM"),
    (36, "NY"),
    (37, "NC"),
    (38, "ND"),
    (39, "OH"),
    (40, "OK"),
    (41, "OR"),
    (42, "PA"),
    (44, "RI"),
    (45, "SC"),
    (46, "SD"),
    (47, "TN"),
    (48, "TX"),
    (49, "UT"),
    (50, "VT"),
    (51, "VA"),
    (53, "WA"),
    (54, "WV"),
    (55, "WI"),
    (56, "WY"),
];

/// A state (or DC), identified by its FIPS code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(u8);

impl StateId {
    pub fn from_fips(fips: u8) -> Option<Self> {
        STATES
            .iter()
            .any(|&(f, _)| f == fips)
            .then_some(StateId(fips))
    }

    pub fn from_code(code: &str) -> Option<Self> {
        STATES
            .iter()
            .find(|(_, c)| c.eq_ignore_ascii_case(code))
            .map(|&(f, _)| StateId(f))
    }

    pub fn fips(self) -> u8 {
        self.0
    }

    pub fn code(self) -> &'static str {
        STATES
            .iter()
            .find(|&&(f, _)| f == self.0)
            .map(|&(_, c)| c)
            .expect("StateId is only constructed from the FIPS table")
    }

    /// All 50 states plus DC in FIPS order.
    pub fn all() -> impl Iterator<Item = StateId> {
        STATES.iter().map(|&(f, _)| StateId(f))
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for StateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(fips) = s.parse::<u8>() {
            return StateId::from_fips(fips).ok_or_else(|| format!("unknown state FIPS {fips}"));
        }
        StateId::from_code(s).ok_or_else(|| format!("unknown state `{s}`"))
    }
}

impl Serialize for StateId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for StateId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl FromStr for Sex {
    type Err = String;

    /// Accepts IPUMS codes (1/2) as well as words.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "m" | "male" => Ok(Sex::Male),
            "2" | "f" | "female" => Ok(Sex::Female),
            other => Err(format!("unrecognized sex `{other}`")),
        }
    }
}

/// One survey household. `year` is the income year (survey year minus one).
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdRecord {
    pub year: i32,
    pub state: StateId,
    pub income: f64,
    pub weight: f64,
    pub members: u32,
    pub age: u8,
    pub sex: Sex,
    pub black: bool,
    pub hispanic: bool,
    pub edu_years: u8,
}

impl HouseholdRecord {
    /// Equivalence scale: square root of the member count.
    pub fn effective_size(&self) -> f64 {
        effective_size(self.members)
    }
}

pub fn effective_size(members: u32) -> f64 {
    f64::from(members).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rejection {
    #[serde(rename = "weight >= 0")]
    NegativeWeight,
    #[serde(rename = "members >= 1")]
    NoMembers,
    #[serde(rename = "0 <= age <= 120")]
    AgeOutOfRange,
    #[serde(rename = "year in range")]
    YearOutOfRange,
    #[serde(rename = "finite income")]
    NonFiniteIncome,
    #[serde(rename = "unparseable field")]
    Unparseable,
}

impl Rejection {
    pub fn reason(self) -> &'static str {
        match self {
            Rejection::NegativeWeight => "weight >= 0",
            Rejection::NoMembers => "members >= 1",
            Rejection::AgeOutOfRange => "0 <= age <= 120",
            Rejection::YearOutOfRange => "year in range",
            Rejection::NonFiniteIncome => "finite income",
            Rejection::Unparseable => "unparseable field",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.reason())
    }
}

/// Inclusive range of income years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub fn new(first: i32, last: i32) -> Self {
        assert!(first <= last, "empty year range {first}..{last}");
        YearRange { first, last }
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<i32> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for YearRange {
    fn default() -> Self {
        YearRange::new(DEFAULT_FIRST_YEAR, DEFAULT_LAST_YEAR)
    }
}

impl FromStr for YearRange {
    type Err = String;

    /// `1976:2019` or a single year.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |p: &str| {
            p.trim()
                .parse::<i32>()
                .map_err(|e| format!("bad year `{p}`: {e}"))
        };
        let (first, last) = match s.split_once(':') {
            Some((a, b)) => (parse(a)?, parse(b)?),
            None => {
                let y = parse(s)?;
                (y, y)
            }
        };
        if first > last {
            return Err(format!("year range {first}:{last} is empty"));
        }
        Ok(YearRange { first, last })
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.first, self.last)
    }
}

/// Returns the first violated invariant, if any.
pub fn validate(record: &HouseholdRecord, years: YearRange) -> Result<(), Rejection> {
    if !(record.weight >= 0.0) {
        return Err(Rejection::NegativeWeight);
    }
    if record.members < 1 {
        return Err(Rejection::NoMembers);
    }
    if record.age > MAX_AGE {
        return Err(Rejection::AgeOutOfRange);
    }
    if !years.contains(record.year) {
        return Err(Rejection::YearOutOfRange);
    }
    if !record.income.is_finite() {
        return Err(Rejection::NonFiniteIncome);
    }
    Ok(())
}

/// Price-side inputs exactly as supplied: CPI (any base), sparse observed RPP and rent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceTables {
    pub cpi: BTreeMap<i32, f64>,
    pub rpp: BTreeMap<(StateId, i32), f64>,
    pub rent: BTreeMap<(StateId, i32), f64>,
    pub rpp_observed_from: i32,
}

impl PriceTables {
    pub fn rpp_states(&self) -> Vec<StateId> {
        let mut states: Vec<_> = self.rpp.keys().map(|&(s, _)| s).collect();
        states.dedup();
        states
    }
}

/// Which normalizers divide nominal income.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// CPI only.
    Rhh,
    /// CPI and household size.
    Erhh,
    /// CPI and regional prices.
    Rhhrpp,
    /// CPI, regional prices and household size.
    Erhhrpp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalizers {
    pub cpi: bool,
    pub rpp: bool,
    pub size: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Rhh, Variant::Erhh, Variant::Rhhrpp, Variant::Erhhrpp];

    pub fn normalizers(self) -> Normalizers {
        match self {
            Variant::Rhh => Normalizers {
                cpi: true,
                rpp: false,
                size: false,
            },
            Variant::Erhh => Normalizers {
                cpi: true,
                rpp: false,
                size: true,
            },
            Variant::Rhhrpp => Normalizers {
                cpi: true,
                rpp: true,
                size: false,
            },
            Variant::Erhhrpp => Normalizers {
                cpi: true,
                rpp: true,
                size: true,
            },
        }
    }

    pub fn uses_rpp(self) -> bool {
        self.normalizers().rpp
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rhh => "RHH",
            Variant::Erhh => "ERHH",
            Variant::Rhhrpp => "RHHRPP",
            Variant::Erhhrpp => "ERHHRPP",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown variant `{s}` (expected RHH, ERHH, RHHRPP or ERHHRPP)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EduBand {
    /// Twelve years or fewer (high-school diploma or less).
    #[serde(rename = "le12")]
    AtMost12,
    #[serde(rename = "gt12")]
    Above12,
}

impl EduBand {
    pub fn of(edu_years: u8) -> Self {
        if edu_years <= 12 {
            EduBand::AtMost12
        } else {
            EduBand::Above12
        }
    }
}

/// Subpopulation selector; unset fields match everything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubpopulationFilter {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sex: Option<Sex>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub black: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hispanic: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub edu: Option<EduBand>,
}

impl SubpopulationFilter {
    pub const ALL: SubpopulationFilter = SubpopulationFilter {
        sex: None,
        black: None,
        hispanic: None,
        edu: None,
    };

    pub fn matches(&self, sex: Sex, black: bool, hispanic: bool, edu_years: u8) -> bool {
        self.sex.is_none_or(|s| s == sex)
            && self.black.is_none_or(|b| b == black)
            && self.hispanic.is_none_or(|h| h == hispanic)
            && self.edu.is_none_or(|e| e == EduBand::of(edu_years))
    }

    /// The nine named filters offered by the explorer.
    pub fn named() -> Vec<(&'static str, SubpopulationFilter)> {
        let base = SubpopulationFilter::ALL;
        vec![
            ("all", base),
            (
                "male",
                SubpopulationFilter {
                    sex: Some(Sex::Male),
                    ..base
                },
            ),
            (
                "female",
                SubpopulationFilter {
                    sex: Some(Sex::Female),
                    ..base
                },
            ),
            (
                "black",
                SubpopulationFilter {
                    black: Some(true),
                    ..base
                },
            ),
            (
                "non-black",
                SubpopulationFilter {
                    black: Some(false),
                    ..base
                },
            ),
            (
                "hispanic",
                SubpopulationFilter {
                    hispanic: Some(true),
                    ..base
                },
            ),
            (
                "non-hispanic",
                SubpopulationFilter {
                    hispanic: Some(false),
                    ..base
                },
            ),
            (
                "edu-le12",
                SubpopulationFilter {
                    edu: Some(EduBand::AtMost12),
                    ..base
                },
            ),
            (
                "edu-gt12",
                SubpopulationFilter {
                    edu: Some(EduBand::Above12),
                    ..base
                },
            ),
        ]
    }

    pub fn by_name(name: &str) -> Option<SubpopulationFilter> {
        Self::named()
            .into_iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name.trim()))
            .map(|(_, f)| f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> HouseholdRecord {
        HouseholdRecord {
            year: 2000,
            state: StateId::from_code("CA").unwrap(),
            income: 52343.81,
            weight: 1538.89,
            members: 2,
            age: 44,
            sex: Sex::Female,
            black: false,
            hispanic: true,
            edu_years: 12,
        }
    }

    #[test]
    fn zero_members_rejected() {
        let r = HouseholdRecord {
            members: 0,
            ..record()
        };
        assert_eq!(validate(&r, YearRange::default()), Err(Rejection::NoMembers));
        assert_eq!(Rejection::NoMembers.reason(), "members >= 1");
    }

    #[test]
    fn largest_observed_weight_ok() {
        let r = HouseholdRecord {
            weight: 17957.53,
            ..record()
        };
        assert_eq!(validate(&r, YearRange::default()), Ok(()));
    }

    #[test]
    fn negative_income_ok() {
        let r = HouseholdRecord {
            income: -37040.0,
            ..record()
        };
        assert_eq!(validate(&r, YearRange::default()), Ok(()));
    }

    #[test]
    fn other_invariants() {
        let years = YearRange::default();
        let bad_weight = HouseholdRecord {
            weight: -1.0,
            ..record()
        };
        assert_eq!(validate(&bad_weight, years), Err(Rejection::NegativeWeight));
        let nan_weight = HouseholdRecord {
            weight: f64::NAN,
            ..record()
        };
        assert_eq!(validate(&nan_weight, years), Err(Rejection::NegativeWeight));
        let old = HouseholdRecord {
            age: 121,
            ..record()
        };
        assert_eq!(validate(&old, years), Err(Rejection::AgeOutOfRange));
        let early = HouseholdRecord {
            year: 1975,
            ..record()
        };
        assert_eq!(validate(&early, years), Err(Rejection::YearOutOfRange));
        // first violated invariant wins
        let both = HouseholdRecord {
            members: 0,
            age: 200,
            ..record()
        };
        assert_eq!(validate(&both, years), Err(Rejection::NoMembers));
    }

    #[test]
    fn state_lookup() {
        assert_eq!(StateId::all().count(), 51);
        let dc = StateId::from_code("dc").unwrap();
        assert_eq!(dc.fips(), 11);
        assert_eq!("11".parse::<StateId>().unwrap(), dc);
        assert_eq!("DC".parse::<StateId>().unwrap(), dc);
        assert!(StateId::from_fips(3).is_none());
    }

    #[test]
    fn variant_normalizer_sets() {
        let sets: Vec<_> = Variant::ALL
            .iter()
            .map(|v| {
                let n = v.normalizers();
                (n.cpi, n.rpp, n.size)
            })
            .collect();
        assert_eq!(
            sets,
            vec![
                (true, false, false),
                (true, false, true),
                (true, true, false),
                (true, true, true)
            ]
        );
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn filter_matching() {
        assert!(SubpopulationFilter::ALL.matches(Sex::Male, true, false, 8));
        let female = SubpopulationFilter::by_name("female").unwrap();
        assert!(female.matches(Sex::Female, false, false, 16));
        assert!(!female.matches(Sex::Male, false, false, 16));
        let le12 = SubpopulationFilter::by_name("edu-le12").unwrap();
        assert!(le12.matches(Sex::Male, false, false, 12));
        assert!(!le12.matches(Sex::Male, false, false, 13));
        assert_eq!(SubpopulationFilter::named().len(), 9);
    }

    #[test]
    fn year_range_parse() {
        let r: YearRange = "1976:2019".parse().unwrap();
        assert_eq!(r.len(), 44);
        assert!("2019:1976".parse::<YearRange>().is_err());
    }
}
