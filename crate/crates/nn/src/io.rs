use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::param::Param;
use crate::NnError;

/// Serialises named tensors (values only) as a safetensors blob.
pub fn save_params(params: &[(String, &Param)], metadata: Option<HashMap<String, String>>) -> Result<Vec<u8>, NnError> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = params
        .iter()
        .map(|(name, p)| {
            let data = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), p.value.shape().to_vec(), data)
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, shape, data)| {
            TensorView::new(Dtype::F32, shape.clone(), data)
                .map(|v| (name.as_str(), v))
                .map_err(|e| NnError::Format(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    safetensors::serialize(views, &metadata).map_err(|e| NnError::Format(e.to_string()))
}

fn read_tensor(st: &SafeTensors<'_>, name: &str) -> Result<ArrayD<f32>, NnError> {
    let view = st.tensor(name).map_err(|_| NnError::MissingTensor(name.to_string()))?;
    if view.dtype() != Dtype::F32 {
        return Err(NnError::Format(format!("{name}: expected F32, found {:?}", view.dtype())));
    }
    let data: Vec<f32> = view
        .data()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ArrayD::from_shape_vec(IxDyn(view.shape()), data).map_err(|e| NnError::Format(e.to_string()))
}

fn assign(name: &str, param: &mut Param, value: ArrayD<f32>) -> Result<(), NnError> {
    if value.shape() != param.value.shape() {
        return Err(NnError::ShapeMismatch {
            name: name.to_string(),
            expected: param.value.shape().to_vec(),
            found: value.shape().to_vec(),
        });
    }
    param.value = value;
    Ok(())
}

/// Loads every parameter by exact name. Missing tensors or shape
/// disagreements are errors; extra tensors in the blob are ignored.
pub fn load_params(bytes: &[u8], params: &mut [(String, &mut Param)]) -> Result<(), NnError> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| NnError::Format(e.to_string()))?;
    for (name, p) in params.iter_mut() {
        let value = read_tensor(&st, name)?;
        assign(name, p, value)?;
    }
    Ok(())
}

/// Loads the subset of parameters for which `source_name` yields a tensor
/// name present in the blob. Returns how many were loaded.
pub fn load_matching(
    bytes: &[u8],
    params: &mut [(String, &mut Param)],
    source_name: impl Fn(&str) -> Option<String>,
) -> Result<usize, NnError> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| NnError::Format(e.to_string()))?;
    let available: std::collections::HashSet<String> = st.names().into_iter().cloned().collect();
    let mut loaded = 0;
    for (name, p) in params.iter_mut() {
        let Some(src) = source_name(name) else { continue };
        if !available.contains(&src) {
            continue;
        }
        let value = read_tensor(&st, &src)?;
        assign(name, p, value)?;
        loaded += 1;
    }
    Ok(loaded)
}

/// Reads the free-form metadata header of a safetensors blob.
pub fn read_metadata(bytes: &[u8]) -> Result<HashMap<String, String>, NnError> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| NnError::Format(e.to_string()))?;
    Ok(meta.metadata().clone().unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Role;

    #[test]
    fn round_trip_preserves_values_and_rejects_bad_shapes() {
        let a = Param::new(ArrayD::from_shape_fn(IxDyn(&[2, 3]), |i| (i[0] * 3 + i[1]) as f32 * 0.5), Role::Kernel);
        let b = Param::new(ArrayD::from_elem(IxDyn(&[4]), -1.25), Role::Buffer);
        let blob = save_params(&[("a".into(), &a), ("b".into(), &b)], None).unwrap();

        let mut a2 = Param::zeros(&[2, 3], Role::Kernel);
        let mut b2 = Param::zeros(&[4], Role::Buffer);
        load_params(&blob, &mut [("a".into(), &mut a2), ("b".into(), &mut b2)]).unwrap();
        assert_eq!(a2.value, a.value);
        assert_eq!(b2.value, b.value);

        let mut wrong = Param::zeros(&[3, 2], Role::Kernel);
        let err = load_params(&blob, &mut [("a".into(), &mut wrong)]).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
        let err = load_params(&blob, &mut [("c".into(), &mut a2)]).unwrap_err();
        assert!(matches!(err, NnError::MissingTensor(_)));
    }
}
