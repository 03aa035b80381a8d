//! Lumped-parameter dynamics of a single ink channel and its fault variants.
//!
//! The sensing-phase dynamics are a fourth-order linear system over the state
//! `x = (V_r, V_n, V̇_r, V̇_n)`: volumes displaced through restrictor and
//! nozzle and their flow rates. Operational faults act multiplicatively on the
//! physical parameters, which shows up as a structured additive perturbation
//! of the state matrix confined to the two flow-rate equations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, RowVector4, Vector4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical parameters of a healthy ink channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Restrictor inertance [Pa·s²/m³].
    pub i_r: f64,
    /// Nozzle inertance [Pa·s²/m³].
    pub i_n: f64,
    /// Restrictor resistance [Pa·s/m³].
    pub r_r: f64,
    /// Nozzle resistance [Pa·s/m³].
    pub r_n: f64,
    /// Total compliance [m³/Pa].
    pub beta_t: f64,
    /// Actuator constant [m³/V].
    pub b: f64,
    /// Acquisition constant [V·s/m³].
    pub c: f64,
}

impl ChannelParams {
    /// Reference parameter set reproducing the identified channel model used
    /// throughout the test fixtures: `1/(I_r β_t) = 4.33e11`,
    /// `R_r/I_r = 1.59e5`, `1/(I_n β_t) = 6.17e11`, `R_n/I_n = 1.75e5`,
    /// `c = 1`. The compliance split is arbitrary; only the four coefficient
    /// ratios are observable from sensing data.
    pub fn reference() -> Self {
        let beta_t = 2.0e-18;
        let i_r = 1.0 / (4.33e11 * beta_t);
        let i_n = 1.0 / (6.17e11 * beta_t);
        Self {
            i_r,
            i_n,
            r_r: 1.59e5 * i_r,
            r_n: 1.75e5 * i_n,
            beta_t,
            b: 1.0e-12,
            c: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("I_r", self.i_r),
            ("I_n", self.i_n),
            ("R_r", self.r_r),
            ("R_n", self.r_n),
            ("beta_t", self.beta_t),
            ("b", self.b),
            ("c", self.c),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive and finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// State-space matrices of the sensing-phase dynamics.
///
/// Rows 1–2 of `A` are the structural identities `V̇ = flow rate`; rows 3–4
/// carry the physical coefficients. `C` reads the sum of the two flow rates
/// scaled by the acquisition constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMatrices {
    pub a: Matrix4<f64>,
    pub b_u: Vector4<f64>,
    pub c: RowVector4<f64>,
}

/// The seven signal classes: healthy plus six fault variants.
///
/// Variant order is the canonical class order used for template columns,
/// confusion matrices and tie-breaking (lowest index wins).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum FaultVariant {
    /// No fault.
    Healthy,
    /// Empty ink channel: inertance drop in both restrictor and nozzle.
    EC,
    /// Fully blocked nozzle: large increase of nozzle inertance and resistance.
    FBN,
    /// Partially blocked nozzle: moderate increase of nozzle inertance and resistance.
    PBN,
    /// Slightly dried nozzle: small increase of nozzle resistance.
    SDN,
    /// Intermediately dried nozzle.
    IDN,
    /// Deeply dried nozzle.
    DDN,
}

impl FaultVariant {
    /// All seven classes in canonical order.
    pub const ALL: [FaultVariant; 7] = [
        FaultVariant::Healthy,
        FaultVariant::EC,
        FaultVariant::FBN,
        FaultVariant::PBN,
        FaultVariant::SDN,
        FaultVariant::IDN,
        FaultVariant::DDN,
    ];

    /// The six fault classes (healthy excluded), canonical order.
    pub const FAULTS: [FaultVariant; 6] = [
        FaultVariant::EC,
        FaultVariant::FBN,
        FaultVariant::PBN,
        FaultVariant::SDN,
        FaultVariant::IDN,
        FaultVariant::DDN,
    ];

    pub fn is_fault(self) -> bool {
        self != FaultVariant::Healthy
    }

    /// Structural incidence matrix of the fault: unit entries at every state
    /// matrix position the variant can perturb. The actual magnitudes are not
    /// known to the detection filter, only the affected equations are.
    pub fn pattern(self) -> Matrix4<f64> {
        let mut p = Matrix4::zeros();
        match self {
            FaultVariant::Healthy => {}
            FaultVariant::EC => {
                p[(2, 0)] = 1.0;
                p[(2, 1)] = 1.0;
                p[(2, 2)] = 1.0;
                p[(3, 0)] = 1.0;
                p[(3, 1)] = 1.0;
                p[(3, 3)] = 1.0;
            }
            FaultVariant::FBN | FaultVariant::PBN => {
                p[(3, 0)] = 1.0;
                p[(3, 1)] = 1.0;
                p[(3, 3)] = 1.0;
            }
            FaultVariant::SDN | FaultVariant::IDN | FaultVariant::DDN => {
                p[(3, 3)] = 1.0;
            }
        }
        p
    }
}

impl fmt::Display for FaultVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FaultVariant::Healthy => "Healthy",
            FaultVariant::EC => "EC",
            FaultVariant::FBN => "FBN",
            FaultVariant::PBN => "PBN",
            FaultVariant::SDN => "SDN",
            FaultVariant::IDN => "IDN",
            FaultVariant::DDN => "DDN",
        };
        f.write_str(name)
    }
}

impl FromStr for FaultVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Healthy" => Ok(FaultVariant::Healthy),
            "EC" => Ok(FaultVariant::EC),
            "FBN" => Ok(FaultVariant::FBN),
            "PBN" => Ok(FaultVariant::PBN),
            "SDN" => Ok(FaultVariant::SDN),
            "IDN" => Ok(FaultVariant::IDN),
            "DDN" => Ok(FaultVariant::DDN),
            other => Err(Error::Format(format!("unknown class label `{other}`"))),
        }
    }
}

/// Parameters a fault variant may perturb.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum PerturbedParam {
    #[serde(rename = "I_r")]
    RestrictorInertance,
    #[serde(rename = "I_n")]
    NozzleInertance,
    #[serde(rename = "R_n")]
    NozzleResistance,
}

/// A fault variant together with the multiplicative factors it applies to the
/// healthy parameters, e.g. `{"variant":"SDN","deltas":{"R_n":1.5}}` for a 50%
/// nozzle-resistance increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub variant: FaultVariant,
    pub deltas: BTreeMap<PerturbedParam, f64>,
}

impl FaultSpec {
    pub fn healthy() -> Self {
        Self {
            variant: FaultVariant::Healthy,
            deltas: BTreeMap::new(),
        }
    }

    pub fn new(variant: FaultVariant, deltas: &[(PerturbedParam, f64)]) -> Result<Self> {
        let spec = Self {
            variant,
            deltas: deltas.iter().copied().collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default fault magnitudes. Calibrated so the class-conditional signal
    /// families reproduce the expected morphology (EC rings faster, blocked
    /// and dried nozzles decay faster, severity ordered FBN > PBN and
    /// DDN > IDN > SDN) and frozen here.
    pub fn default_for(variant: FaultVariant) -> Self {
        use FaultVariant::*;
        use PerturbedParam::*;
        let deltas: &[(PerturbedParam, f64)] = match variant {
            Healthy => &[],
            EC => &[(RestrictorInertance, 0.25), (NozzleInertance, 0.25)],
            FBN => &[(NozzleInertance, 4.0), (NozzleResistance, 8.0)],
            PBN => &[(NozzleInertance, 1.5), (NozzleResistance, 2.0)],
            SDN => &[(NozzleResistance, 1.5)],
            IDN => &[(NozzleResistance, 3.0)],
            DDN => &[(NozzleResistance, 8.0)],
        };
        Self::new(variant, deltas).expect("default deltas are valid")
    }

    /// Checks that the touched parameters and the perturbation directions
    /// match the variant: EC decreases both inertances, blockage increases
    /// nozzle inertance and resistance, drying increases nozzle resistance.
    pub fn validate(&self) -> Result<()> {
        use FaultVariant::*;
        use PerturbedParam::*;

        for (&param, &factor) in &self.deltas {
            if !factor.is_finite() || factor <= 0.0 {
                return Err(Error::InvalidFault(format!(
                    "{:?} delta factor must be positive and finite, got {factor}",
                    param
                )));
            }
        }

        let expect = |keys: &[PerturbedParam], increase: bool| -> Result<()> {
            if self.deltas.len() != keys.len()
                || !keys.iter().all(|k| self.deltas.contains_key(k))
            {
                return Err(Error::InvalidFault(format!(
                    "{} must perturb exactly {:?}",
                    self.variant, keys
                )));
            }
            for (&param, &factor) in &self.deltas {
                let ok = if increase { factor > 1.0 } else { factor < 1.0 };
                if !ok {
                    return Err(Error::InvalidFault(format!(
                        "{} requires {} of {:?}, got factor {factor}",
                        self.variant,
                        if increase { "an increase" } else { "a decrease" },
                        param
                    )));
                }
            }
            Ok(())
        };

        match self.variant {
            Healthy => {
                if !self.deltas.is_empty() {
                    return Err(Error::InvalidFault(
                        "healthy spec must have no deltas".into(),
                    ));
                }
                Ok(())
            }
            EC => expect(&[RestrictorInertance, NozzleInertance], false),
            FBN | PBN => expect(&[NozzleInertance, NozzleResistance], true),
            SDN | IDN | DDN => expect(&[NozzleResistance], true),
        }
    }

    fn factor(&self, param: PerturbedParam) -> f64 {
        self.deltas.get(&param).copied().unwrap_or(1.0)
    }
}

/// Builds the healthy state-space matrices from the physical parameters.
pub fn build_system_matrices(p: &ChannelParams) -> Result<SystemMatrices> {
    p.validate()?;
    let a = Matrix4::new(
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        -1.0 / (p.i_r * p.beta_t),
        -1.0 / (p.i_r * p.beta_t),
        -p.r_r / p.i_r,
        0.0,
        -1.0 / (p.i_n * p.beta_t),
        -1.0 / (p.i_n * p.beta_t),
        0.0,
        -p.r_n / p.i_n,
    );
    let b_u = Vector4::new(0.0, 0.0, p.b / (p.i_r * p.beta_t), p.b / (p.i_n * p.beta_t));
    let c = RowVector4::new(0.0, 0.0, p.c, p.c);
    Ok(SystemMatrices { a, b_u, c })
}

/// Additive state-matrix perturbation produced by a fault, i.e. the faulted
/// coefficients minus the healthy ones.
///
/// Each entry is derived from the multiplicative factors alone: scaling `I_r`
/// by `g` divides the row-3 coefficients by `g`, scaling `I_n` divides the
/// row-4 inertance coefficients, and the `(4,4)` entry scales by
/// `g_{R_n}/g_{I_n}`.
pub fn build_fault_matrix(base: &SystemMatrices, spec: &FaultSpec) -> Result<Matrix4<f64>> {
    if spec.variant == FaultVariant::Healthy {
        return Err(Error::InvalidFault(
            "healthy variant has no fault matrix".into(),
        ));
    }
    spec.validate()?;

    let g_ir = spec.factor(PerturbedParam::RestrictorInertance);
    let g_in = spec.factor(PerturbedParam::NozzleInertance);
    let g_rn = spec.factor(PerturbedParam::NozzleResistance);

    let a = &base.a;
    let mut delta = Matrix4::zeros();
    if g_ir != 1.0 {
        delta[(2, 0)] = a[(2, 0)] / g_ir - a[(2, 0)];
        delta[(2, 1)] = a[(2, 1)] / g_ir - a[(2, 1)];
        delta[(2, 2)] = a[(2, 2)] / g_ir - a[(2, 2)];
    }
    if g_in != 1.0 {
        delta[(3, 0)] = a[(3, 0)] / g_in - a[(3, 0)];
        delta[(3, 1)] = a[(3, 1)] / g_in - a[(3, 1)];
    }
    if g_in != 1.0 || g_rn != 1.0 {
        delta[(3, 3)] = a[(3, 3)] * g_rn / g_in - a[(3, 3)];
    }
    Ok(delta)
}

/// State matrix of the (possibly faulted) dynamics. The fault signal is taken
/// constant over the acquisition window, so the result stays LTI.
pub fn faulted_dynamics(base: &SystemMatrices, spec: &FaultSpec) -> Result<Matrix4<f64>> {
    if spec.variant == FaultVariant::Healthy {
        return Ok(base.a);
    }
    Ok(base.a + build_fault_matrix(base, spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_matrices() -> SystemMatrices {
        build_system_matrices(&ChannelParams::reference()).unwrap()
    }

    /// Dominant oscillation: the eigenvalue pair with the largest imaginary
    /// part.
    fn dominant_eig(a: &Matrix4<f64>) -> (f64, f64) {
        let eigs = a.complex_eigenvalues();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for e in eigs.iter() {
            if e.im > best.0 {
                best = (e.im, e.re);
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn reference_matches_identified_coefficients() {
        let m = reference_matrices();
        assert_relative_eq!(m.a[(2, 0)], -4.33e11, max_relative = 1e-12);
        assert_relative_eq!(m.a[(2, 1)], -4.33e11, max_relative = 1e-12);
        assert_relative_eq!(m.a[(2, 2)], -1.59e5, max_relative = 1e-12);
        assert_relative_eq!(m.a[(3, 0)], -6.17e11, max_relative = 1e-12);
        assert_relative_eq!(m.a[(3, 1)], -6.17e11, max_relative = 1e-12);
        assert_relative_eq!(m.a[(3, 3)], -1.75e5, max_relative = 1e-12);
        assert_eq!(m.a[(2, 3)], 0.0);
        assert_eq!(m.a[(3, 2)], 0.0);
        assert_eq!(m.c, RowVector4::new(0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn structural_rows_are_identities() {
        let m = reference_matrices();
        assert_eq!(m.a.row(0).clone_owned(), RowVector4::new(0.0, 0.0, 1.0, 0.0));
        assert_eq!(m.a.row(1).clone_owned(), RowVector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn unit_parameters_give_unit_coefficients() {
        let p = ChannelParams {
            i_r: 1.0,
            i_n: 1.0,
            r_r: 1.0,
            r_n: 1.0,
            beta_t: 1.0,
            b: 1.0,
            c: 1.0,
        };
        let m = build_system_matrices(&p).unwrap();
        for (i, j) in [(2, 0), (2, 1), (3, 0), (3, 1), (2, 2), (3, 3)] {
            assert_eq!(m.a[(i, j)], -1.0);
        }
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        let mut p = ChannelParams::reference();
        p.r_n = 0.0;
        assert!(build_system_matrices(&p).is_err());
        p.r_n = f64::NAN;
        assert!(build_system_matrices(&p).is_err());
    }

    #[test]
    fn sdn_perturbs_single_entry() {
        let m = reference_matrices();
        let spec =
            FaultSpec::new(FaultVariant::SDN, &[(PerturbedParam::NozzleResistance, 1.5)]).unwrap();
        let delta = build_fault_matrix(&m, &spec).unwrap();
        let p = ChannelParams::reference();
        assert_relative_eq!(delta[(3, 3)], -0.5 * p.r_n / p.i_n, max_relative = 1e-12);
        let mut nonzero = 0;
        delta.iter().for_each(|v| {
            if *v != 0.0 {
                nonzero += 1;
            }
        });
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn fbn_pattern_is_row_four() {
        let m = reference_matrices();
        let delta = build_fault_matrix(&m, &FaultSpec::default_for(FaultVariant::FBN)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected_nonzero = matches!((i, j), (3, 0) | (3, 1) | (3, 3));
                assert_eq!(
                    delta[(i, j)] != 0.0,
                    expected_nonzero,
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn ec_matches_rebuild_and_subtract_oracle() {
        let p = ChannelParams::reference();
        let m = build_system_matrices(&p).unwrap();
        let spec = FaultSpec::new(
            FaultVariant::EC,
            &[
                (PerturbedParam::RestrictorInertance, 0.5),
                (PerturbedParam::NozzleInertance, 0.5),
            ],
        )
        .unwrap();
        let delta = build_fault_matrix(&m, &spec).unwrap();

        // Independent route: rebuild the matrices with halved inertances and
        // subtract the healthy state matrix.
        let perturbed = ChannelParams {
            i_r: p.i_r * 0.5,
            i_n: p.i_n * 0.5,
            ..p
        };
        let oracle = build_system_matrices(&perturbed).unwrap().a - m.a;
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(delta[(i, j)], oracle[(i, j)], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn healthy_dynamics_is_bit_exact_identity() {
        let m = reference_matrices();
        let a = faulted_dynamics(&m, &FaultSpec::healthy()).unwrap();
        assert_eq!(a, m.a);
    }

    #[test]
    fn ddn_changes_only_the_damping_entry() {
        let m = reference_matrices();
        let a = faulted_dynamics(&m, &FaultSpec::default_for(FaultVariant::DDN)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if (i, j) == (3, 3) {
                    assert!(a[(i, j)] != m.a[(i, j)]);
                } else {
                    assert_eq!(a[(i, j)], m.a[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn quarter_inertance_doubles_dominant_frequency() {
        let m = reference_matrices();
        let spec = FaultSpec::new(
            FaultVariant::EC,
            &[
                (PerturbedParam::RestrictorInertance, 0.25),
                (PerturbedParam::NozzleInertance, 0.25),
            ],
        )
        .unwrap();
        let faulted = faulted_dynamics(&m, &spec).unwrap();
        let (w_healthy, _) = dominant_eig(&m.a);
        let (w_faulted, _) = dominant_eig(&faulted);
        let ratio = w_faulted / w_healthy;
        // Not exactly 2 because the damping terms scale along; the lightly
        // damped modes keep the ratio within a few percent of it.
        assert!((ratio - 2.0).abs() < 0.06, "frequency ratio {ratio}");
    }

    #[test]
    fn fault_directions_shift_dominant_eigenvalues_as_expected() {
        let m = reference_matrices();
        let (w0, re0) = dominant_eig(&m.a);
        for variant in FaultVariant::FAULTS {
            let a = faulted_dynamics(&m, &FaultSpec::default_for(variant)).unwrap();
            let (w, re) = dominant_eig(&a);
            match variant {
                FaultVariant::EC => {
                    assert!(w > w0, "{variant}: expected higher ring frequency");
                }
                _ => {
                    assert!(re < re0, "{variant}: expected faster decay");
                }
            }
        }
    }

    #[test]
    fn healthy_rejects_fault_matrix_and_deltas() {
        let m = reference_matrices();
        assert!(build_fault_matrix(&m, &FaultSpec::healthy()).is_err());
        let bad = FaultSpec {
            variant: FaultVariant::Healthy,
            deltas: [(PerturbedParam::NozzleResistance, 1.5)].into_iter().collect(),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn delta_direction_is_validated() {
        // EC must decrease inertances.
        assert!(FaultSpec::new(
            FaultVariant::EC,
            &[
                (PerturbedParam::RestrictorInertance, 1.5),
                (PerturbedParam::NozzleInertance, 0.5),
            ],
        )
        .is_err());
        // Dried nozzle must increase resistance.
        assert!(
            FaultSpec::new(FaultVariant::IDN, &[(PerturbedParam::NozzleResistance, 0.9)]).is_err()
        );
        // Wrong parameter set.
        assert!(
            FaultSpec::new(FaultVariant::SDN, &[(PerturbedParam::NozzleInertance, 1.5)]).is_err()
        );
    }

    #[test]
    fn fault_spec_round_trips_through_json() {
        let spec = FaultSpec::default_for(FaultVariant::SDN);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"variant":"SDN","deltas":{"R_n":1.5}}"#);
        let back: FaultSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_fault_spec() -> impl Strategy<Value = FaultSpec> {
            use FaultVariant::*;
            use PerturbedParam::*;
            prop_oneof![
                (0.01f64..0.99, 0.01f64..0.99).prop_map(|(a, b)| FaultSpec::new(
                    EC,
                    &[(RestrictorInertance, a), (NozzleInertance, b)]
                )
                .unwrap()),
                (1.01f64..20.0, 1.01f64..20.0).prop_map(|(a, b)| FaultSpec::new(
                    FBN,
                    &[(NozzleInertance, a), (NozzleResistance, b)]
                )
                .unwrap()),
                (1.01f64..20.0, 1.01f64..20.0).prop_map(|(a, b)| FaultSpec::new(
                    PBN,
                    &[(NozzleInertance, a), (NozzleResistance, b)]
                )
                .unwrap()),
                (1.01f64..20.0).prop_map(|a| FaultSpec::new(SDN, &[(NozzleResistance, a)])
                    .unwrap()),
                (1.01f64..20.0).prop_map(|a| FaultSpec::new(IDN, &[(NozzleResistance, a)])
                    .unwrap()),
                (1.01f64..20.0).prop_map(|a| FaultSpec::new(DDN, &[(NozzleResistance, a)])
                    .unwrap()),
            ]
        }

        proptest! {
            /// The nonzero pattern of any fault matrix stays inside the
            /// variant's structural incidence pattern.
            #[test]
            fn fault_matrix_pattern_is_subset_of_incidence(spec in arb_fault_spec()) {
                let m = reference_matrices();
                let delta = build_fault_matrix(&m, &spec).unwrap();
                let pattern = spec.variant.pattern();
                for i in 0..4 {
                    for j in 0..4 {
                        if delta[(i, j)] != 0.0 {
                            prop_assert!(pattern[(i, j)] != 0.0, "entry ({},{})", i, j);
                        }
                    }
                }
            }
        }
    }
}
