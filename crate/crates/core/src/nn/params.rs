use super::Scalar;

/// One named parameter tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Running batch-norm moments are stored here too, but not trained.
    pub trainable: bool,
}

/// Every parameter of a model, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Registers a parameter and returns its id.
    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<T>, trainable: bool) -> usize {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "parameter {name} shape");
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        let n = value.len();
        let zeros = || if trainable { vec![T::zero(); n] } else { Vec::new() };
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            grad: zeros(),
            m: zeros(),
            v: zeros(),
            trainable,
        });
        self.params.len() - 1
    }

    pub fn get(&self, id: usize) -> &Param<T> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Param<T> {
        &mut self.params[id]
    }

    pub fn value(&self, id: usize) -> &[T] {
        &self.params[id].value
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// A parameter's value alongside its writable gradient.
    pub fn value_and_grad(&mut self, id: usize) -> (&[T], &mut [T]) {
        let p = &mut self.params[id];
        (&p.value, &mut p.grad)
    }
}
