//! Dropout rates from category counts and the week where decline settles.
use mooc_analytics::cohort::{self, CohortSummary, DropoutPointConfig, DropoutRates};

fn main() {
    for (name, counts) in [("gol-2014", [1012, 479, 217, 177]), ("lin-2014", [519, 333, 131, 99])] {
        let s = CohortSummary::from_counts(name, counts[0], counts[1], counts[2], counts[3]).unwrap();
        println!("{name}: active {:.2}%, certified {:.2}%", s.ratios.active.unwrap(), s.ratios.certified.unwrap());
        for (label, v) in DropoutRates::NAMES.iter().zip(cohort::dropout_rates(&s).values()) {
            println!("  dropout {label:<26} {:.2}%", v.unwrap());
        }
    }
    let series = [1000, 620, 390, 250, 238, 226, 219, 330, 205, 199];
    for exceedances in [0, 1] {
        let cfg = DropoutPointConfig { allowed_exceedances: exceedances, ..Default::default() };
        let p = cohort::dropout_point(&series, &cfg).unwrap();
        println!("series {series:?}, exceedances {exceedances}: boundary {:?}", p.week_boundary);
    }
}
