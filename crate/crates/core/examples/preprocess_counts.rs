//! Up-samples four-hourly cumulative counts to 15-minute intervals, repairs a
//! gap and balances entries against exits.

use odest::domain::{Matrix, ObservationSet};
use odest::preprocess::{balance_counts, impute_gaps, upsample_counts};

fn main() -> odest::Result<()> {
    let t = [0.0, 240.0, 480.0, 720.0];
    let entries = [0.0, 480.0, 1500.0, 1800.0];
    let exits = [0.0, 400.0, 1350.0, 1700.0];
    let x = upsample_counts(&t, &entries, 15.0)?;
    let y = upsample_counts(&t, &exits, 15.0)?;
    println!("first hour of entries: {:.2?}", &x[..4]);
    println!("resummed first interval: {:.9}", x[..16].iter().sum::<f64>());

    let mut series: Vec<Option<f64>> = x.iter().map(|&v| Some(v)).collect();
    series[20] = None;
    series[30] = Some(series[30].unwrap() * 100.0);
    let (fixed, mask) = impute_gaps(&series, 3, 5.0)?;
    let edited: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k).collect();
    println!("imputed indices {edited:?}: {:.2} {:.2}", fixed[20], fixed[30]);

    let balanced = balance_counts(&ObservationSet::new(
        Matrix::from_vec(x.len(), 1, x.clone())?,
        Matrix::from_vec(y.len(), 1, y)?,
        None,
    )?)?;
    println!("first balanced exit interval: {:.3}", balanced.y().get(0, 0));

    let two = ObservationSet::new(
        Matrix::from_rows(&[vec![60.0, 40.0]])?,
        Matrix::from_rows(&[vec![30.0, 50.0]])?,
        None,
    )?;
    let b = balance_counts(&two)?;
    println!("balanced exits: {:?}", b.y().row(0));
    Ok(())
}
