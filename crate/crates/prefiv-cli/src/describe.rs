//! Descriptive tables for a dataset: treatment share per calendar period,
//! the spread of per-provider treatment proportions, and missing-value
//! counts per column. Plain text, one table per block, printed to stdout.

use prefiv::data::PanelDataset;

use crate::csvio::{sig6, IngestReport};

/// Linearly interpolated quantile of an already sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary of per-provider treatment proportions.
pub fn provider_proportion_summary(dataset: &PanelDataset) -> [f64; 5] {
    let mut props: Vec<f64> = dataset
        .providers
        .iter()
        .map(|p| p.records.iter().map(|r| r.x as f64).sum::<f64>() / p.len() as f64)
        .collect();
    props.sort_by(f64::total_cmp);
    [
        props[0],
        quantile(&props, 0.25),
        quantile(&props, 0.5),
        quantile(&props, 0.75),
        props[props.len() - 1],
    ]
}

/// Treatment share per calendar period, as (period, records, share).
pub fn period_shares(dataset: &PanelDataset) -> Vec<(u32, usize, f64)> {
    let mut counts: Vec<(usize, usize)> = vec![(0, 0); 13];
    for (_, rec) in dataset.iter_records() {
        let t = rec.time_index.min(12) as usize;
        counts[t].0 += 1;
        counts[t].1 += rec.x as usize;
    }
    (1..=12u32)
        .filter(|&t| counts[t as usize].0 > 0)
        .map(|t| {
            let (n, treated) = counts[t as usize];
            (t, n, treated as f64 / n as f64)
        })
        .collect()
}

/// Renders the full report.
pub fn render(dataset: &PanelDataset, report: &IngestReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "dataset: {} records, {} providers\n\n",
        report.n_rows, report.n_providers
    ));

    out.push_str("per-period treatment share\nperiod  records  share\n");
    for (t, n, share) in period_shares(dataset) {
        out.push_str(&format!("{t:<6}  {n:<7}  {}\n", sig6(share)));
    }

    let [min, q1, median, q3, max] = provider_proportion_summary(dataset);
    out.push_str("\nper-provider treatment proportion\nmin  q1  median  q3  max\n");
    out.push_str(&format!(
        "{}  {}  {}  {}  {}\n",
        sig6(min),
        sig6(q1),
        sig6(median),
        sig6(q3),
        sig6(max)
    ));

    out.push_str("\nmissing values\ncolumn  missing  rate\n");
    for (name, missing) in &report.missing_counts {
        let rate = *missing as f64 / report.n_rows.max(1) as f64;
        out.push_str(&format!("{name:<6}  {missing:<7}  {}\n", sig6(rate)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csvio::{read_dataset, ColumnSpec};

    fn toy(rows: &[(&str, u8)]) -> (PanelDataset, IngestReport) {
        let spec = ColumnSpec::parse(
            "provider = p\norder = i\ntreatment = x\noutcome = y\n",
        )
        .unwrap();
        let mut csv = String::from("p,i,x,y\n");
        let mut next_index = std::collections::HashMap::new();
        for (pid, x) in rows {
            let i = next_index.entry(pid.to_string()).or_insert(0usize);
            *i += 1;
            csv.push_str(&format!("{pid},{i},{x},1.0\n"));
        }
        read_dataset(&csv, &spec).unwrap()
    }

    #[test]
    fn balanced_data_has_median_half() {
        // Four providers, each exactly half treated.
        let rows: Vec<(&str, u8)> = ["a", "b", "c", "d"]
            .iter()
            .flat_map(|p| (0..10).map(move |k| (*p, (k % 2) as u8)))
            .collect();
        let (ds, _) = toy(&rows);
        let [min, _, median, _, max] = provider_proportion_summary(&ds);
        assert_eq!(median, 0.5);
        assert_eq!(min, 0.5);
        assert_eq!(max, 0.5);
    }

    #[test]
    fn quartiles_interpolate_between_order_statistics() {
        let sorted = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&sorted, 0.5), 1.5);
        assert_eq!(quantile(&sorted, 0.25), 0.75);
        assert_eq!(quantile(&sorted, 0.0), 0.0);
        assert_eq!(quantile(&sorted, 1.0), 3.0);
    }

    #[test]
    fn period_shares_track_the_underlying_rates() {
        // 24 patients per provider: first half untreated, second treated,
        // so periods 1..6 have share 0 and 7..12 share 1.
        let rows: Vec<(&str, u8)> =
            (0..24).map(|k| ("a", u8::from(k >= 12))).collect();
        let (ds, _) = toy(&rows);
        let shares = period_shares(&ds);
        assert_eq!(shares.len(), 12);
        assert_eq!(shares[0], (1, 2, 0.0));
        assert_eq!(shares[11], (12, 2, 1.0));
    }

    #[test]
    fn render_lists_missing_rates() {
        let spec = ColumnSpec::parse(
            "provider = p\norder = i\ntreatment = x\noutcome = y\ncovariates.missable = w\n",
        )
        .unwrap();
        let csv = "p,i,x,y,w\na,1,1,1.0,\na,2,0,2.0,3.5\n";
        let (ds, report) = read_dataset(csv, &spec).unwrap();
        let text = render(&ds, &report);
        assert!(text.contains("dataset: 2 records, 1 providers"));
        assert!(text.lines().any(|l| l.starts_with('w') && l.contains("0.5")), "{text}");
    }
}
