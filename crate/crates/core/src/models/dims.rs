use std::fmt;

/// Shapes recorded at every edge of a model graph by symbolic propagation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DimContract {
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub name: String,
    pub shape: Vec<usize>,
}

impl DimContract {
    pub(crate) fn push(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.edges.push(Edge { name: name.into(), shape: shape.to_vec() });
    }

    pub fn shape_at(&self, name: &str) -> Option<&[usize]> {
        self.edges.iter().find(|e| e.name == name).map(|e| e.shape.as_slice())
    }
}

impl fmt::Display for DimContract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for edge in &self.edges {
            writeln!(f, "{:<48} {:?}", edge.name, edge.shape)?;
        }
        Ok(())
    }
}
