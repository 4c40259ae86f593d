//! Ensemble inference. Every member's prediction is brought to the image
//! magnitude domain; the pixel-wise mean is the reconstruction and the
//! pixel-wise population standard deviation is the uncertainty map.

use ndarray::{stack, Array2, Array3, Axis};

use crate::kspace::ifft2c;
use crate::model::UNetModel;
use crate::tensorio::{ComplexSlice, Domain, IqtDomain, MagnitudeSlice};
use crate::{Error, Result};

/// Network input of either kind.
#[derive(Debug, Clone, Copy)]
pub enum ReconInput<'a> {
    Kspace(&'a ComplexSlice),
    Magnitude(&'a MagnitudeSlice),
}

impl ReconInput<'_> {
    pub fn domain(&self) -> IqtDomain {
        match self {
            ReconInput::Kspace(_) => IqtDomain::Kspace,
            ReconInput::Magnitude(_) => IqtDomain::Spatial,
        }
    }

    /// The network tensor: `[real, imag]` for k-space, the image otherwise.
    pub fn to_tensor(&self) -> Result<Array3<f32>> {
        match self {
            ReconInput::Kspace(k) => kspace_tensor(k),
            ReconInput::Magnitude(m) => Ok(magnitude_tensor(m)),
        }
    }
}

pub fn kspace_tensor(k: &ComplexSlice) -> Result<Array3<f32>> {
    k.expect_domain(Domain::Kspace)?;
    Ok(stack(Axis(0), &[k.real().view(), k.imag().view()]).expect("planes share a shape"))
}

pub fn magnitude_tensor(m: &MagnitudeSlice) -> Array3<f32> {
    m.data().clone().insert_axis(Axis(0))
}

/// Maps a network output back to a `[0, 1]` magnitude image.
pub fn output_to_magnitude(out: Array3<f32>, domain: IqtDomain) -> Result<MagnitudeSlice> {
    let image = match domain {
        IqtDomain::Kspace => {
            let re = out.index_axis(Axis(0), 0).to_owned();
            let im = out.index_axis(Axis(0), 1).to_owned();
            ifft2c(&ComplexSlice::new(re, im, Domain::Kspace, 1.0)?)?.magnitude()
        }
        IqtDomain::Spatial => out.index_axis_move(Axis(0), 0),
    };
    MagnitudeSlice::new(image.mapv(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }), 1.0)
}

/// One model's reconstruction, clamped to the `[0, 1]` range of the
/// normalized targets.
pub fn reconstruct_one(model: &UNetModel<f32>, input: ReconInput<'_>) -> Result<MagnitudeSlice> {
    let domain = model.config().domain()?;
    if domain != input.domain() {
        return Err(Error::InvalidArgument(format!(
            "{} model cannot take {} input",
            domain.as_str(),
            input.domain().as_str()
        )));
    }
    output_to_magnitude(model.forward(&input.to_tensor()?)?, domain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub mean_image: MagnitudeSlice,
    /// Population standard deviation across members.
    pub std_map: Array2<f32>,
    pub member_count: usize,
    pub domain_of_inference: IqtDomain,
}

/// Pixel-wise mean and population standard deviation of member images.
pub fn combine_members(members: &[MagnitudeSlice], domain: IqtDomain) -> Result<EnsembleResult> {
    let first = members.first().ok_or_else(|| Error::InvalidArgument("ensemble has no members".into()))?;
    if members.iter().any(|m| m.dim() != first.dim()) {
        return Err(Error::Shape("ensemble members differ in shape".into()));
    }
    let n = members.len() as f64;
    let mut mean = Array2::<f64>::zeros(first.dim());
    for m in members {
        mean.zip_mut_with(m.data(), |a, &v| *a += f64::from(v));
    }
    mean.mapv_inplace(|v| v / n);
    let mut var = Array2::<f64>::zeros(first.dim());
    for m in members {
        ndarray::Zip::from(&mut var).and(&mean).and(m.data()).for_each(|s, &mu, &v| {
            let d = f64::from(v) - mu;
            *s += d * d;
        });
    }
    let std_map = var.mapv(|v| (v / n).sqrt() as f32);
    Ok(EnsembleResult {
        mean_image: MagnitudeSlice::new(mean.mapv(|v| v as f32), 1.0)?,
        std_map,
        member_count: members.len(),
        domain_of_inference: domain,
    })
}

pub fn ensemble_predict(models: &[UNetModel<f32>], input: ReconInput<'_>) -> Result<EnsembleResult> {
    let first = models.first().ok_or_else(|| Error::InvalidArgument("ensemble has no members".into()))?;
    let domain = first.config().domain()?;
    for m in models {
        if m.config().domain()? != domain {
            return Err(Error::InvalidArgument("ensemble mixes k-space and spatial models".into()));
        }
    }
    let members = models.iter().map(|m| reconstruct_one(m, input)).collect::<Result<Vec<_>>>()?;
    combine_members(&members, domain)
}
