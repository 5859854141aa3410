use crate::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<L: AsRef<[f64]>>(logits: &[L], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Metric("accuracy of an empty batch".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::Metric(format!("{} predictions for {} labels", logits.len(), labels.len())));
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(z, &y)| argmax(z.as_ref()) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct() {
        assert_eq!(accuracy(&[vec![1.0, 0.0], vec![0.0, 2.0]], &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(accuracy(&[vec![0.0; 3], vec![0.0; 3]], &[0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[vec![0.0; 3]], &[2]).unwrap(), 0.0);
    }

    #[test]
    fn three_of_four() {
        let z = [vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(accuracy(&z, &[0, 0, 1, 0]).unwrap(), 0.75);
    }

    #[test]
    fn empty_batch_is_metric_error() {
        let z: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(accuracy(&z, &[]), Err(Error::Metric(_))));
    }
}
