use std::fmt;

use super::model::add_port;
use super::{validate_identifier, AtomicModel, KernelError};

/// One endpoint of a coupling, seen from inside the coupled model that owns it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PortRef {
    /// A port of the coupled model itself.
    Own(String),
    /// A port of a direct child, `(child, port)`.
    Child(String, String),
}

impl PortRef {
    pub fn own(port: &str) -> Self {
        PortRef::Own(port.to_string())
    }

    pub fn child(component: &str, port: &str) -> Self {
        PortRef::Child(component.to_string(), port.to_string())
    }

    /// Parses `"port"` (own port) or `"child.port"`.
    pub fn parse(path: &str) -> Self {
        match path.split_once('.') {
            Some((component, port)) => PortRef::child(component, port),
            None => PortRef::own(path),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortRef::Own(p) => write!(f, "{p}"),
            PortRef::Child(c, p) => write!(f, "{c}.{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CouplingKind {
    /// own input -> child input
    Eic,
    /// child output -> child input
    Ic,
    /// child output -> own output
    Eoc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coupling {
    pub kind: CouplingKind,
    pub src: PortRef,
    pub dst: PortRef,
}

#[derive(Debug)]
pub enum Component {
    Atomic(AtomicModel),
    Coupled(CoupledModel),
}

impl Component {
    pub fn name(&self) -> &str {
        match self {
            Component::Atomic(a) => &a.name,
            Component::Coupled(c) => &c.name,
        }
    }

    fn inputs(&self) -> &[String] {
        match self {
            Component::Atomic(a) => &a.inputs,
            Component::Coupled(c) => &c.inputs,
        }
    }

    fn outputs(&self) -> &[String] {
        match self {
            Component::Atomic(a) => &a.outputs,
            Component::Coupled(c) => &c.outputs,
        }
    }
}

impl From<AtomicModel> for Component {
    fn from(model: AtomicModel) -> Self {
        Component::Atomic(model)
    }
}

impl From<CoupledModel> for Component {
    fn from(model: CoupledModel) -> Self {
        Component::Coupled(model)
    }
}

/// A composite model wiring named children through EIC, IC and EOC couplings.
#[derive(Debug)]
pub struct CoupledModel {
    pub(crate) name: String,
    pub(crate) inputs: Vec<String>,
    pub(crate) outputs: Vec<String>,
    pub(crate) components: Vec<Component>,
    pub(crate) couplings: Vec<Coupling>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dir {
    In,
    Out,
}

impl CoupledModel {
    pub fn new(name: &str) -> Result<Self, KernelError> {
        validate_identifier(name)?;
        Ok(Self {
            name: name.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            components: Vec::new(),
            couplings: Vec::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn add_input(&mut self, port: &str) -> Result<(), KernelError> {
        add_port(&self.name, &mut self.inputs, port)
    }

    pub fn add_output(&mut self, port: &str) -> Result<(), KernelError> {
        add_port(&self.name, &mut self.outputs, port)
    }

    pub fn add_component(&mut self, component: impl Into<Component>) -> Result<(), KernelError> {
        let component = component.into();
        if self.components.iter().any(|c| c.name() == component.name()) {
            return Err(KernelError::DuplicateComponent {
                parent: self.name.clone(),
                name: component.name().to_string(),
            });
        }
        self.components.push(component);
        Ok(())
    }

    /// Registers a coupling, classifying it as EIC, IC or EOC from its endpoints.
    pub fn add_coupling(&mut self, src: PortRef, dst: PortRef) -> Result<CouplingKind, KernelError> {
        let kind = match (&src, &dst) {
            (PortRef::Own(_), PortRef::Child(..)) => CouplingKind::Eic,
            (PortRef::Child(..), PortRef::Child(..)) => CouplingKind::Ic,
            (PortRef::Child(..), PortRef::Own(_)) => CouplingKind::Eoc,
            (PortRef::Own(_), PortRef::Own(_)) => {
                return Err(self.class_error(&src, &dst, "direct input-to-output feedthrough"))
            }
        };
        // Sources are own inputs or child outputs; destinations are child inputs or own outputs.
        let src_dir = if matches!(src, PortRef::Own(_)) {
            Dir::In
        } else {
            Dir::Out
        };
        let dst_dir = if matches!(dst, PortRef::Own(_)) {
            Dir::Out
        } else {
            Dir::In
        };
        self.check_endpoint(&src, src_dir, &src, &dst)?;
        self.check_endpoint(&dst, dst_dir, &src, &dst)?;
        let coupling = Coupling { kind, src, dst };
        if !self.couplings.contains(&coupling) {
            self.couplings.push(coupling);
        }
        Ok(kind)
    }

    /// Convenience form of [`CoupledModel::add_coupling`] taking `"child.port"` / `"port"` paths.
    pub fn connect(&mut self, src: &str, dst: &str) -> Result<CouplingKind, KernelError> {
        self.add_coupling(PortRef::parse(src), PortRef::parse(dst))
    }

    fn check_endpoint(&self, end: &PortRef, want: Dir, src: &PortRef, dst: &PortRef) -> Result<(), KernelError> {
        let (owner, port, inputs, outputs) =
            match end {
                PortRef::Own(p) => (self.name.as_str(), p, &self.inputs[..], &self.outputs[..]),
                PortRef::Child(c, p) => {
                    let child = self.components.iter().find(|x| x.name() == c).ok_or_else(|| {
                        KernelError::MissingComponent {
                            parent: self.name.clone(),
                            name: c.clone(),
                        }
                    })?;
                    (child.name(), p, child.inputs(), child.outputs())
                }
            };
        let (wanted, other) = match want {
            Dir::In => (inputs, outputs),
            Dir::Out => (outputs, inputs),
        };
        if wanted.contains(port) {
            Ok(())
        } else if other.contains(port) {
            let reason = match want {
                Dir::In => format!("{owner}.{port} is an output port where an input is required"),
                Dir::Out => format!("{owner}.{port} is an input port where an output is required"),
            };
            Err(self.class_error(src, dst, &reason))
        } else {
            Err(KernelError::MissingPort {
                component: owner.to_string(),
                port: port.clone(),
            })
        }
    }

    fn class_error(&self, src: &PortRef, dst: &PortRef, reason: &str) -> KernelError {
        KernelError::CouplingClass {
            parent: self.name.clone(),
            src: src.to_string(),
            dst: dst.to_string(),
            reason: reason.to_string(),
        }
    }
}
