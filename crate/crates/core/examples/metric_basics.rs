//! Mahalanobis distances, positive-definiteness checks, Gaussian KL and row
//! importance on small hand-built matrices.

use semshift::metric::{check_positive_definite, gaussian_kl, row_importance, GaussianPair};
use semshift::MahalanobisMatrix;

fn main() -> semshift::Result<()> {
    let a = MahalanobisMatrix::from_full(2, vec![2.0, 1.0, 1.0, 2.0])?;
    println!("h((1,1), 0; A) = {}", a.distance(&[1.0, 1.0], &[0.0, 0.0])?);

    let report = check_positive_definite(&a)?;
    println!("positive definite: {} (min pivot {:.4})", report.positive_definite, report.min_pivot);

    let not_pd = MahalanobisMatrix::from_full(2, vec![1.0, 0.0, 0.0, -1.0]);
    println!("diag(1, -1) accepted: {}", not_pd.is_ok());

    let pair = GaussianPair::centered(MahalanobisMatrix::identity(2), MahalanobisMatrix::identity(2).scaled(2.0)?)?;
    println!("KL(I || 2I) = {:.6}", gaussian_kl(&pair)?);

    let b = MahalanobisMatrix::from_full(2, vec![4.0, 2.0, 2.0, 3.0])?;
    println!("row importance: {:?}", row_importance(&b));
    println!("diagonal copy: {:?}", b.to_diagonal()?.diagonal());
    Ok(())
}
