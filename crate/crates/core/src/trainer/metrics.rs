use std::io::Write;

use crate::losses::LossTerms;

pub const METRICS_HEADER: &str = "iteration,ce,cce,ccl,total,val_acc,wall_ms";

/// One line of the metric log. Empty cells mean "not computed".
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub losses: Option<LossTerms>,
    pub val_acc: Option<f64>,
    pub wall_ms: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        let l = r.losses;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            cell(l.and_then(|l| l.ce)),
            cell(l.and_then(|l| l.cce)),
            cell(l.and_then(|l| l.ccl)),
            cell(l.map(|l| l.total)),
            cell(r.val_acc),
            cell(r.wall_ms.map(|w| w.round()))
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cells_for_missing_values() {
        let rows = [
            MetricRow {
                iteration: 0,
                losses: None,
                val_acc: Some(0.5),
                wall_ms: None,
            },
            MetricRow {
                iteration: 1,
                losses: Some(LossTerms {
                    ce: Some(1.25),
                    cce: None,
                    ccl: Some(0.5),
                    total: 1.75,
                }),
                val_acc: None,
                wall_ms: Some(3.4),
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,ce,cce,ccl,total,val_acc,wall_ms\n0,,,,,0.5,\n1,1.25,,0.5,1.75,,3\n"
        );
    }
}
