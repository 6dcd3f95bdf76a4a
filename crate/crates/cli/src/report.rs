//! Shape sweeps for the `report` subcommand.

use std::time::Duration;

use tilewise_core::runtime::select_timed;
use tilewise_core::{Error, KernelBank, RuntimeShape, TensorProgramSpec};

use crate::hardware::Hardware;

/// `key=a..b:step`, inclusive of `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub axis: usize,
    pub start: u64,
    pub end: u64,
    pub step: u64,
}

impl Sweep {
    pub fn parse(text: &str, prog: &TensorProgramSpec) -> Result<Self, String> {
        let hint = "sweeps look like m=1..64:1";
        let (key, range) = text
            .split_once('=')
            .ok_or_else(|| format!("sweep '{text}' has no '='; {hint}"))?;
        let axis = prog
            .axis_index(key.trim())
            .ok_or_else(|| format!("unknown sweep axis '{}'; {hint}", key.trim()))?;
        let (bounds, step) = match range.split_once(':') {
            Some((b, s)) => (b, s.trim()),
            None => (range, "1"),
        };
        let (a, b) = bounds
            .split_once("..")
            .ok_or_else(|| format!("sweep range '{bounds}' has no '..'; {hint}"))?;
        let num = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| format!("'{}' is not an integer; {hint}", s.trim()))
        };
        let sweep = Sweep {
            axis,
            start: num(a)?,
            end: num(b)?,
            step: num(step)?,
        };
        if sweep.step == 0 || sweep.start == 0 {
            return Err(format!("sweep start and step must be at least 1; {hint}"));
        }
        Ok(sweep)
    }

    /// Empty when `start > end`.
    pub fn values(&self) -> Vec<u64> {
        (self.start..=self.end).step_by(self.step as usize).collect()
    }
}

/// Extents for every axis except the swept one.
pub fn fixed_axes(text: &str, prog: &TensorProgramSpec, swept: usize) -> Result<Vec<u64>, String> {
    let mut values = vec![0u64; prog.axes.len()];
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("shape entry '{part}' is not key=value"))?;
        let a = prog
            .axis_index(k.trim())
            .ok_or_else(|| format!("unknown axis '{}'", k.trim()))?;
        if a == swept {
            return Err(format!("axis '{}' is both swept and fixed", k.trim()));
        }
        values[a] = v
            .trim()
            .parse()
            .map_err(|_| format!("extent '{}' is not an integer", v.trim()))?;
    }
    let missing: Vec<&str> = (0..prog.axes.len())
        .filter(|&a| a != swept && values[a] == 0)
        .map(|a| prog.axes[a].name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(format!("--shape must fix axes: {}", missing.join(", ")));
    }
    Ok(values)
}

pub struct Outcome {
    pub cycles: u64,
    pub waste: f64,
    pub selection: Duration,
    pub top_tile: String,
}

pub struct Row {
    pub shape: Vec<u64>,
    pub outcomes: Vec<Outcome>,
    /// Cheapest backend; ties go to the earliest.
    pub best: usize,
}

pub fn run(
    backends: &[(Hardware, KernelBank, TensorProgramSpec)],
    sweep: &Sweep,
    fixed: &[u64],
) -> Result<Vec<Row>, Error> {
    sweep
        .values()
        .into_iter()
        .map(|v| {
            let mut shape = fixed.to_vec();
            shape[sweep.axis] = v;
            let rs = RuntimeShape(shape.clone());
            let outcomes = backends
                .iter()
                .map(|(hw, bank, prog)| {
                    let (plan, selection) = select_timed(bank, &rs, &hw.descriptor, prog)?;
                    Ok(Outcome {
                        cycles: plan.predicted_cost_cycles,
                        waste: plan.padding_waste,
                        selection,
                        top_tile: plan
                            .top_tile()
                            .0
                            .iter()
                            .map(u64::to_string)
                            .collect::<Vec<_>>()
                            .join("x"),
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let best = (0..outcomes.len())
                .min_by_key(|&i| (outcomes[i].cycles, i))
                .expect("at least one backend");
            Ok(Row { shape, outcomes, best })
        })
        .collect()
}

pub fn to_csv(prog: &TensorProgramSpec, names: &[&str], rows: &[Row]) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = prog.axes.iter().map(|a| a.name.clone()).collect();
    for n in names {
        for col in ["cycles", "waste", "select_us", "top_tile"] {
            header.push(format!("{n}_{col}"));
        }
    }
    header.push("best_backend".into());
    w.write_record(&header)?;
    for row in rows {
        let mut rec: Vec<String> = row.shape.iter().map(u64::to_string).collect();
        for o in &row.outcomes {
            rec.push(o.cycles.to_string());
            rec.push(format!("{:.6}", o.waste));
            rec.push(format!("{:.1}", o.selection.as_secs_f64() * 1e6));
            rec.push(o.top_tile.clone());
        }
        rec.push(names[row.best].to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tilewise_core::gemm_program;

    #[test]
    fn sweep_syntax() {
        let p = gemm_program(3);
        let s = Sweep::parse("m=5..128:19", &p).unwrap();
        assert_eq!(s.values(), vec![5, 24, 43, 62, 81, 100, 119]);
        assert_eq!(Sweep::parse("k=3..3", &p).unwrap().values(), vec![3]);
        assert!(Sweep::parse("m=4..1", &p).unwrap().values().is_empty());
        for bad in ["m=1..x", "q=1..4", "m=1-4", "m=1..4:0", "m1..4"] {
            assert!(Sweep::parse(bad, &p).is_err(), "{bad}");
        }
    }

    #[test]
    fn fixed_axes_cover_the_rest() {
        let p = gemm_program(3);
        assert_eq!(fixed_axes("n=64,k=32", &p, 0).unwrap(), vec![0, 64, 32]);
        assert!(fixed_axes("n=64", &p, 0).is_err());
        assert!(fixed_axes("m=1,n=64,k=2", &p, 0).is_err());
    }
}
