//! Hand-designed benchmark cases and the suite evaluation driver.

use crate::curriculum::WindowConfig;
use crate::error::{CoreError, Result};
use crate::models::Model;
use crate::rollout::{rollout, OraclePredictor, RolloutConfig};
use crate::sim::{run_simulation, GaussianPacketSpec, PotentialSpec, RectBarrier, SimGrid};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseCategory {
    Free,
    Rect,
    MultiRect,
    Irregular,
    Quadratic,
    Well,
    Pyramid,
    HalfCircle,
    NonGaussian,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteCase {
    pub name: String,
    pub category: CaseCategory,
    pub packet: GaussianPacketSpec,
    pub potential: PotentialSpec,
}

impl SuiteCase {
    fn new(
        name: &str,
        category: CaseCategory,
        packet: GaussianPacketSpec,
        potential: PotentialSpec,
    ) -> Self {
        Self {
            name: name.into(),
            category,
            packet,
            potential,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestSuite {
    pub name: String,
    pub cases: Vec<SuiteCase>,
}

impl TestSuite {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn count(&self, category: CaseCategory) -> usize {
        self.cases.iter().filter(|c| c.category == category).count()
    }

    pub fn filtered(&self, category: CaseCategory) -> TestSuite {
        TestSuite {
            name: format!("{}_{:?}", self.name, category).to_lowercase(),
            cases: self
                .cases
                .iter()
                .filter(|c| c.category == category)
                .cloned()
                .collect(),
        }
    }
}

/// 12 freely dispersing packets spanning X0 ∈ (10, 90), S0 ∈ (0.5, 9),
/// E0 ∈ (0, 9).
pub fn free_suite() -> TestSuite {
    let params: [(f64, f64, f64); 12] = [
        (20.0, 2.0, 5.0),
        (50.0, 2.0, 5.0),
        (80.0, 2.0, 3.0),
        (15.0, 0.8, 7.0),
        (35.0, 5.0, 1.0),
        (60.0, 8.5, 0.5),
        (45.0, 1.2, 8.8),
        (70.0, 3.0, 2.5),
        (25.0, 6.0, 4.0),
        (55.0, 0.6, 6.5),
        (85.0, 4.5, 1.5),
        (40.0, 2.8, 0.2),
    ];
    TestSuite {
        name: "free".into(),
        cases: params
            .iter()
            .enumerate()
            .map(|(i, &(x0, s0, e0))| {
                SuiteCase::new(
                    &format!("free_{:02}", i + 1),
                    CaseCategory::Free,
                    GaussianPacketSpec::new(x0, s0, e0),
                    PotentialSpec::Free,
                )
            })
            .collect(),
    }
}

/// 25 potential-landscape cases: 11 single rectangular barriers, 2 double,
/// 1 triple, 7 irregular shapes (stepped pyramids, half-circle bumps and
/// rectangular staircases), 2 quadratic traps, 2 rectangular wells.
pub fn potential_suite() -> TestSuite {
    let p = GaussianPacketSpec::new(30.0, 2.0, 5.0);
    let packet = |x0: f64, s0: f64, e0: f64| GaussianPacketSpec::new(x0, s0, e0);
    let rect = |h: f64, w: f64| PotentialSpec::rectangular(h, w);
    let bars = |list: &[(f64, f64, f64)]| PotentialSpec::MultiRectangular {
        barriers: list
            .iter()
            .map(|&(height, width, center)| RectBarrier {
                height,
                width,
                center,
            })
            .collect(),
    };

    use CaseCategory::*;
    let cases = vec![
        SuiteCase::new("rect_thin_low", Rect, p, rect(3.0, 2.0)),
        SuiteCase::new("rect_thin_high", Rect, p, rect(12.0, 2.0)),
        SuiteCase::new("rect_narrow_mid", Rect, packet(25.0, 1.5, 4.0), rect(6.0, 4.0)),
        SuiteCase::new("rect_std_low", Rect, p, rect(2.0, 7.0)),
        SuiteCase::new("rect_std_mid", Rect, packet(30.0, 2.5, 6.0), rect(7.0, 7.0)),
        SuiteCase::new("rect_std_high", Rect, p, rect(13.0, 7.0)),
        SuiteCase::new("rect_wide_low", Rect, packet(28.0, 2.0, 3.5), rect(3.0, 10.0)),
        SuiteCase::new("rect_wide_high", Rect, p, rect(11.0, 10.0)),
        SuiteCase::new("rect_broad_mid", Rect, packet(22.0, 3.0, 5.5), rect(5.0, 12.0)),
        SuiteCase::new(
            "rect_offset",
            Rect,
            p,
            PotentialSpec::Rectangular {
                height: 8.0,
                width: 5.0,
                center: Some(65.0),
            },
        ),
        SuiteCase::new("rect_over_barrier", Rect, packet(30.0, 2.0, 7.5), rect(4.0, 3.0)),
        SuiteCase::new(
            "double_split",
            MultiRect,
            p,
            bars(&[(6.0, 3.0, 45.0), (6.0, 3.0, 58.0)]),
        ),
        SuiteCase::new(
            "double_uneven",
            MultiRect,
            packet(25.0, 2.0, 6.0),
            bars(&[(9.0, 2.0, 48.0), (4.0, 5.0, 62.0)]),
        ),
        SuiteCase::new(
            "triple_comb",
            MultiRect,
            p,
            bars(&[(5.0, 2.0, 44.0), (7.0, 2.0, 52.0), (5.0, 2.0, 60.0)]),
        ),
        SuiteCase::new(
            "pyramid_coarse",
            Pyramid,
            p,
            PotentialSpec::Pyramid {
                n_steps: 3,
                base: 12.0,
                height: 8.0,
                center: None,
            },
        ),
        SuiteCase::new(
            "pyramid_tall",
            Pyramid,
            packet(28.0, 2.0, 6.0),
            PotentialSpec::Pyramid {
                n_steps: 5,
                base: 10.0,
                height: 12.0,
                center: None,
            },
        ),
        SuiteCase::new(
            "half_circle_low",
            HalfCircle,
            p,
            PotentialSpec::HalfCircle {
                radius: 5.0,
                peak: 6.0,
                center: None,
            },
        ),
        SuiteCase::new(
            "half_circle_high",
            HalfCircle,
            packet(30.0, 2.5, 5.0),
            PotentialSpec::HalfCircle {
                radius: 4.0,
                peak: 10.0,
                center: None,
            },
        ),
        SuiteCase::new(
            "staircase_up",
            Irregular,
            p,
            bars(&[(3.0, 3.0, 47.0), (6.0, 3.0, 50.0), (9.0, 3.0, 53.0)]),
        ),
        SuiteCase::new(
            "staircase_down",
            Irregular,
            packet(25.0, 2.0, 5.5),
            bars(&[(10.0, 2.0, 48.0), (6.0, 2.0, 50.0), (2.0, 4.0, 53.0)]),
        ),
        SuiteCase::new(
            "battlement",
            Irregular,
            p,
            bars(&[(8.0, 1.5, 46.0), (3.0, 4.0, 50.0), (8.0, 1.5, 54.0)]),
        ),
        SuiteCase::new(
            "quadratic_soft",
            Quadratic,
            packet(40.0, 2.0, 3.0),
            PotentialSpec::Quadratic {
                curvature: 0.01,
                vertex: None,
            },
        ),
        SuiteCase::new(
            "quadratic_stiff",
            Quadratic,
            packet(42.0, 1.5, 2.0),
            PotentialSpec::Quadratic {
                curvature: 0.03,
                vertex: None,
            },
        ),
        SuiteCase::new(
            "well_shallow",
            Well,
            p,
            PotentialSpec::RectangularWell {
                depth: 4.0,
                width: 6.0,
                center: None,
            },
        ),
        SuiteCase::new(
            "well_deep",
            Well,
            packet(32.0, 2.0, 4.0),
            PotentialSpec::RectangularWell {
                depth: 10.0,
                width: 4.0,
                center: None,
            },
        ),
    ];
    TestSuite {
        name: "potential".into(),
        cases,
    }
}

/// The 37-case benchmark: 12 free + 25 potential cases.
pub fn full_suite() -> TestSuite {
    let mut cases = free_suite().cases;
    cases.extend(potential_suite().cases);
    TestSuite {
        name: "full".into(),
        cases,
    }
}

/// What drives the per-window predictions in a suite run: a trained model,
/// or the simulator itself acting as a perfect reference emulator.
pub enum SuitePredictor<'a> {
    Model(&'a Model),
    Oracle,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub category: CaseCategory,
    /// Frames the predictor produced.
    pub steps: usize,
    /// Frames that had ground truth to score against.
    pub scored_steps: usize,
    pub mean_mae: f64,
    pub mean_corr: f64,
    pub final_corr: f64,
    pub truncated_at: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
    /// ⟨|ε|⟩: flat mean over every recorded step of every successful case.
    pub mean_mae: f64,
    /// ⟨C⟩: flat mean over the same steps.
    pub mean_corr: f64,
}

impl SuiteReport {
    pub fn n_failed(&self) -> usize {
        self.cases.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn mean_corr_of(&self, category: CaseCategory) -> f64 {
        let vals: Vec<f64> = self
            .cases
            .iter()
            .filter(|c| c.category == category && c.error.is_none())
            .map(|c| c.mean_corr)
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(
            "name,category,steps,scored_steps,mean_mae,mean_corr,final_corr,truncated_at,error\n",
        );
        for c in &self.cases {
            out.push_str(&format!(
                "{},{:?},{},{},{:.9e},{:.9},{:.9},{},{}\n",
                c.name,
                c.category,
                c.steps,
                c.scored_steps,
                c.mean_mae,
                c.mean_corr,
                c.final_corr,
                c.truncated_at.map_or(String::new(), |t| t.to_string()),
                c.error.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
        out.push_str(&format!(
            "aggregate,,,,{:.9e},{:.9},,,\n",
            self.mean_mae, self.mean_corr
        ));
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Simulates every case, rolls the predictor out against it, and
/// aggregates ⟨|ε|⟩ and ⟨C⟩ over all steps of all successful cases.
/// Per-case failures are recorded in the report instead of aborting.
pub fn run_suite(
    predictor: SuitePredictor,
    suite: &TestSuite,
    grid: &SimGrid,
    window: &WindowConfig,
    cfg: &RolloutConfig,
) -> Result<SuiteReport> {
    if suite.is_empty() {
        return Err(CoreError::EmptyInput(format!("test suite {}", suite.name)));
    }
    let mut cases = Vec::with_capacity(suite.len());
    let mut sum_mae = 0.0f64;
    let mut sum_corr = 0.0f64;
    let mut n_steps_total = 0usize;

    for case in &suite.cases {
        let outcome = run_simulation(&case.packet, &case.potential, grid).and_then(|traj| {
            let result = match &predictor {
                SuitePredictor::Model(m) => rollout(*m, &traj, window, cfg)?,
                SuitePredictor::Oracle => {
                    let oracle = OraclePredictor {
                        traj: &traj,
                        window: *window,
                    };
                    rollout(&oracle, &traj, window, cfg)?
                }
            };
            Ok(result)
        });
        match outcome {
            Ok(result) => {
                sum_mae += result.mae.iter().sum::<f64>();
                sum_corr += result.corr.iter().sum::<f64>();
                n_steps_total += result.corr.len();
                cases.push(CaseResult {
                    name: case.name.clone(),
                    category: case.category,
                    steps: result.produced_steps(),
                    scored_steps: result.corr.len(),
                    mean_mae: result.mean_mae(),
                    mean_corr: result.mean_corr(),
                    final_corr: result.corr.last().copied().unwrap_or(f64::NAN),
                    truncated_at: result.truncated_at,
                    error: None,
                });
            }
            Err(err) => cases.push(CaseResult {
                name: case.name.clone(),
                category: case.category,
                steps: 0,
                scored_steps: 0,
                mean_mae: f64::NAN,
                mean_corr: f64::NAN,
                final_corr: f64::NAN,
                truncated_at: None,
                error: Some(err.to_string()),
            }),
        }
    }

    let (mean_mae, mean_corr) = if n_steps_total == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (
            sum_mae / n_steps_total as f64,
            sum_corr / n_steps_total as f64,
        )
    };
    Ok(SuiteReport {
        cases,
        mean_mae,
        mean_corr,
    })
}
