use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_STATIC: usize = 23;

/// Canonical column names, in storage order.
pub const STATIC_NAMES: [&str; N_STATIC] = [
    "icu_los_days",
    "pre_icu_los_days",
    "age_years",
    "n_recent_admissions",
    "gender_male",
    "elective_surgery",
    "adm_clinic_referral",
    "adm_other_unknown",
    "adm_phys_referral",
    "adm_transfer_hospital",
    "adm_transfer_snf",
    "ins_government",
    "ins_medicaid",
    "ins_private",
    "ins_self_pay",
    "marital_other_unknown",
    "marital_single",
    "marital_widowed_divorced",
    "eth_asian",
    "eth_black",
    "eth_hispanic",
    "eth_other_unknown",
    "eth_unable_to_obtain",
];

/// Human-readable covariate labels for odds-ratio tables.
pub const STATIC_LABELS: [&str; N_STATIC] = [
    "ICU Length of Stay (days)",
    "Pre-ICU Length of Stay (days)",
    "Age (years)",
    "Number of Recent Admissions",
    "Gender: Male",
    "Elective Surgery",
    "Admission Location: Clinic Referral/Premature Delivery",
    "Admission Location: Other/Unknown",
    "Admission Location: Physician Referral/Normal Delivery",
    "Admission Location: Transfer from Hospital/Extramural",
    "Admission Location: Transfer from Skilled Nursing Facility",
    "Insurance: Government",
    "Insurance: Medicaid",
    "Insurance: Private",
    "Insurance: Self Pay",
    "Marital Status: Other/Unknown",
    "Marital Status: Single",
    "Marital Status: Widowed/Divorced/Separated",
    "Ethnicity: Asian",
    "Ethnicity: Black/African American",
    "Ethnicity: Hispanic/Latino",
    "Ethnicity: Other/Unknown",
    "Ethnicity: Unable to Obtain",
];

pub const N_CONTINUOUS: usize = 4;
const BINARY: std::ops::Range<usize> = 4..6;

/// One-hot groups (column ranges). The omitted level of each group is the
/// reference: emergency room admit, Medicare, married/life partner, white.
pub const INDICATOR_GROUPS: [(&str, std::ops::Range<usize>); 4] = [
    ("admission_location", 6..11),
    ("insurance", 11..15),
    ("marital_status", 15..18),
    ("ethnicity", 18..23),
];

pub fn static_index(name: &str) -> Option<usize> {
    STATIC_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticVector(pub [f64; N_STATIC]);

impl Default for StaticVector {
    fn default() -> Self {
        Self([0.0; N_STATIC])
    }
}

impl StaticVector {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; N_STATIC] = values
            .try_into()
            .map_err(|_| Error::Data(format!("static vector needs {N_STATIC} entries, got {}", values.len())))?;
        let v = Self(arr);
        v.validate()?;
        Ok(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        static_index(name).map(|i| self.0[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = static_index(name).ok_or_else(|| Error::Data(format!("unknown static feature {name}")))?;
        self.0[i] = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.0.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("{} is not finite", STATIC_NAMES[i])));
            }
        }
        for (v, name) in self.0.iter().zip(STATIC_NAMES).take(N_CONTINUOUS) {
            if *v < 0.0 {
                return Err(Error::Data(format!("{name} must be non-negative")));
            }
        }
        for i in BINARY.chain(INDICATOR_GROUPS.iter().flat_map(|g| g.1.clone())) {
            if self.0[i] != 0.0 && self.0[i] != 1.0 {
                return Err(Error::Data(format!("{} must be 0 or 1", STATIC_NAMES[i])));
            }
        }
        for (group, range) in &INDICATOR_GROUPS {
            let s: f64 = self.0[range.clone()].iter().sum();
            if s > 1.0 {
                return Err(Error::Data(format!("more than one {group} indicator set")));
            }
        }
        Ok(())
    }
}
