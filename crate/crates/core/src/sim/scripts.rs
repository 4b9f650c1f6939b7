//! Built-in labelled script library.

use super::human::{HumanScript, Step, Target};
use super::push::Dislodge;

pub const NAMES: [&str; 10] = [
    "nominal",
    "nominal_reverse",
    "false_reach",
    "pass_near",
    "guided_recovery",
    "single_failure",
    "double_failure",
    "interleaved",
    "push_noise",
    "mixed_abnormal",
];

/// Scripts that contain a false cooperation cue.
pub const ABNORMAL: [&str; 4] = [
    "false_reach",
    "pass_near",
    "guided_recovery",
    "mixed_abnormal",
];

const START: [f64; 2] = [0.0, -0.1];
const PICK: f64 = 3.0;
const DWELL: f64 = 12.0;

fn part(region: usize) -> [Step; 2] {
    [
        Step::Pick { dwell: PICK },
        Step::Align {
            region,
            dwell: DWELL,
        },
    ]
}

fn parts(order: &[usize]) -> Vec<Step> {
    order.iter().flat_map(|&r| part(r)).collect()
}

fn finish(mut steps: Vec<Step>) -> Vec<Step> {
    steps.push(Step::WaitForRobot { timeout: 12.0 });
    steps.push(Step::RecoverFailures);
    steps.push(Step::WaitForRobot { timeout: 12.0 });
    steps
}

fn script(name: &str, description: &str, steps: Vec<Step>) -> HumanScript {
    HumanScript {
        name: name.to_owned(),
        description: description.to_owned(),
        start: START,
        steps: finish(steps),
        dislodge: Vec::new(),
        push_noise: None,
        max_duration: 180.0,
        abnormal: false,
    }
}

fn false_reach() -> Step {
    Step::FalseReach {
        linger: 0.4,
        withdraw_to: Target::Prep,
        dwell: 1.5,
    }
}

fn pass_near(region: usize) -> Step {
    Step::PassNear {
        region,
        clearance: 0.1,
        linger: 1.2,
        dwell: DWELL,
    }
}

pub fn builtin(name: &str) -> Option<HumanScript> {
    let s = match name {
        "nominal" => script(
            "nominal",
            "four parts in order, no failures",
            parts(&[0, 1, 2, 3]),
        ),
        "nominal_reverse" => script(
            "nominal_reverse",
            "four parts in reverse order",
            parts(&[3, 2, 1, 0]),
        ),
        "false_reach" => {
            let mut steps = parts(&[0, 1, 2, 3]);
            steps.push(Step::WaitForRobot { timeout: 12.0 });
            steps.push(Step::FalseReach {
                linger: 0.4,
                withdraw_to: Target::Region(1),
                dwell: 3.0,
            });
            let mut s = script(
                "false_reach",
                "reach toward the idle robot without a failure, then return to a part",
                steps,
            );
            s.abnormal = true;
            s
        }
        "pass_near" => {
            let mut steps = parts(&[2, 3]);
            steps.push(Step::Pick { dwell: PICK });
            steps.push(pass_near(0));
            steps.extend(parts(&[1]));
            let mut s = script(
                "pass_near",
                "pass slowly beside the effector on the way to a region",
                steps,
            );
            s.abnormal = true;
            s
        }
        "guided_recovery" => {
            let mut steps = parts(&[0, 1, 2, 3]);
            steps.push(Step::WaitForRobot { timeout: 12.0 });
            steps.push(false_reach());
            steps.push(Step::RecoverFailures);
            let mut s = script(
                "guided_recovery",
                "part 3 is dislodged twice; an abnormal reach happens in between",
                steps,
            );
            s.dislodge = vec![
                Dislodge {
                    region: 3,
                    time: 0.0,
                },
                Dislodge {
                    region: 3,
                    time: 0.0,
                },
            ];
            s.abnormal = true;
            s
        }
        "single_failure" => {
            let mut s = script(
                "single_failure",
                "part 1 is dislodged once",
                parts(&[0, 1, 2, 3]),
            );
            s.dislodge = vec![Dislodge {
                region: 1,
                time: 0.0,
            }];
            s
        }
        "double_failure" => {
            let mut s = script(
                "double_failure",
                "parts 0 and 2 are dislodged once each",
                parts(&[0, 1, 2, 3]),
            );
            s.dislodge = vec![
                Dislodge {
                    region: 0,
                    time: 0.0,
                },
                Dislodge {
                    region: 2,
                    time: 0.0,
                },
            ];
            s
        }
        "interleaved" => {
            let mut steps = parts(&[1, 0]);
            steps.push(Step::Wait { secs: 2.0 });
            steps.extend(parts(&[3, 2]));
            script(
                "interleaved",
                "two parts back to back, a pause, then two more",
                steps,
            )
        }
        "push_noise" => {
            let mut s = script(
                "push_noise",
                "noisy pushes against a tight tolerance",
                parts(&[0, 1, 2, 3]),
            );
            s.push_noise = Some(0.04);
            s
        }
        "mixed_abnormal" => {
            let mut steps = parts(&[2]);
            steps.push(Step::Wait { secs: 1.0 });
            steps.push(false_reach());
            steps.extend(parts(&[3]));
            steps.push(Step::Pick { dwell: PICK });
            steps.push(pass_near(0));
            steps.extend(parts(&[1]));
            let mut s = script(
                "mixed_abnormal",
                "a false reach, a pass-near and one dislodged part",
                steps,
            );
            s.dislodge = vec![Dislodge {
                region: 1,
                time: 0.0,
            }];
            s.abnormal = true;
            s
        }
        _ => return None,
    };
    Some(s)
}

pub fn all() -> Vec<HumanScript> {
    NAMES
        .iter()
        .map(|n| builtin(n).expect("listed script"))
        .collect()
}

/// Straight reach to `region` starting `offset` away, at `speed`, then a dwell.
pub fn reach(region: usize, start: [f64; 2], dwell: f64) -> HumanScript {
    HumanScript {
        name: format!("reach_{region}"),
        description: "single straight reach".to_owned(),
        start,
        steps: vec![Step::Align { region, dwell }],
        dislodge: Vec::new(),
        push_noise: None,
        max_duration: 30.0,
        abnormal: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_validates() {
        for s in all() {
            s.validate(4).unwrap();
            assert_eq!(builtin(&s.name).unwrap(), s);
        }
        assert!(builtin("nope").is_none());
    }
}
