use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::scan::Scanner;
use super::{parse_contract, Activation, Contract, DslError, MethodRef, Step, TimingTarget};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSig {
    pub name: String,
    pub args: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceInterface {
    pub name: String,
    pub methods: Vec<MethodSig>,
    /// `None` means any number of clients.
    pub max_clients: Option<u32>,
}

impl ServiceInterface {
    pub fn has_method(&self, m: &MethodRef) -> bool {
        self.methods
            .iter()
            .any(|sig| sig.name == m.method && sig.args == m.args)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRepository {
    pub services: BTreeMap<String, ServiceInterface>,
}

impl ServiceRepository {
    pub fn get(&self, name: &str) -> Option<&ServiceInterface> {
        self.services.get(name)
    }

    pub fn max_clients(&self, service: &str) -> Option<u32> {
        self.services.get(service).and_then(|s| s.max_clients)
    }
}

impl fmt::Display for ServiceRepository {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.services.values() {
            match s.max_clients {
                Some(n) => writeln!(f, "service {} max_clients {n}", s.name)?,
                None => writeln!(f, "service {}", s.name)?,
            }
            for m in &s.methods {
                writeln!(f, "  method {}({})", m.name, m.args)?;
            }
        }
        Ok(())
    }
}

/// `service ID [max_clients INT] {method ID "(" [args] ")"}` blocks.
pub fn parse_service_repository(text: &str) -> Result<ServiceRepository, DslError> {
    let mut s = Scanner::new(text);
    let mut repo = ServiceRepository::default();
    while !s.at_eof() {
        s.keyword("service")?;
        let (name, _) = s.ident()?;
        let mut max_clients = None;
        if s.eat_keyword("max_clients") {
            let n = s.int()?;
            if n == 0 {
                return Err(DslError::ZeroMaxClients(name));
            }
            max_clients = Some(u32::try_from(n).map_err(|_| s.error("max_clients out of range"))?);
        }
        let mut methods: Vec<MethodSig> = Vec::new();
        while s.eat_keyword("method") {
            let (method, _) = s.ident()?;
            s.punct('(')?;
            let args = s.raw_args()?;
            if methods.iter().any(|m| m.name == method) {
                return Err(DslError::DuplicateMethod {
                    service: name,
                    method,
                });
            }
            methods.push(MethodSig { name: method, args });
        }
        if repo.services.contains_key(&name) {
            return Err(DslError::DuplicateInterface(name));
        }
        repo.services.insert(
            name.clone(),
            ServiceInterface {
                name,
                methods,
                max_clients,
            },
        );
    }
    Ok(repo)
}

/// The set of contracts known to the system, selected or not, together with
/// the service interfaces they refer to.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SoftwareModel {
    pub contracts: BTreeMap<String, Contract>,
    pub services: ServiceRepository,
}

impl SoftwareModel {
    pub fn new(services: ServiceRepository) -> Self {
        SoftwareModel {
            contracts: BTreeMap::new(),
            services,
        }
    }

    pub fn from_contracts(
        contracts: impl IntoIterator<Item = Contract>,
        services: ServiceRepository,
    ) -> Result<Self, DslError> {
        let mut model = SoftwareModel::new(services);
        for c in contracts {
            model.check_contract(&c)?;
            if model.contracts.contains_key(&c.component) {
                return Err(DslError::DuplicateComponent(c.component));
            }
            model.contracts.insert(c.component.clone(), c);
        }
        Ok(model)
    }

    pub fn contract(&self, name: &str) -> Option<&Contract> {
        self.contracts.get(name)
    }

    /// Components other than `except` that provide `service`, in name order.
    pub fn providers_of<'a>(
        &'a self,
        service: &'a str,
        except: &'a str,
    ) -> impl Iterator<Item = &'a str> + 'a {
        self.contracts
            .values()
            .filter(move |c| c.component != except && c.provides.contains(service))
            .map(|c| c.component.as_str())
    }

    pub fn roots(&self) -> BTreeSet<String> {
        self.contracts
            .values()
            .filter(|c| c.is_root())
            .map(|c| c.component.clone())
            .collect()
    }

    /// Cross-check a contract against the service repository.
    pub fn check_contract(&self, c: &Contract) -> Result<(), DslError> {
        for s in c.requires.iter().chain(&c.provides) {
            if self.services.get(s).is_none() {
                return Err(DslError::UnknownService {
                    component: c.component.clone(),
                    service: s.clone(),
                });
            }
        }
        let check = |m: &MethodRef| -> Result<(), DslError> {
            match self.services.get(&m.service) {
                None => Err(DslError::UnknownService {
                    component: c.component.clone(),
                    service: m.service.clone(),
                }),
                Some(iface) if !iface.has_method(m) => Err(DslError::UnknownMethod {
                    component: c.component.clone(),
                    method: m.to_string(),
                }),
                Some(_) => Ok(()),
            }
        };
        for th in &c.threads {
            if let Activation::Rpc(m) = &th.activation {
                check(m)?;
            }
            for step in &th.steps {
                if let Step::Call { target, .. } = step {
                    check(target)?;
                }
            }
        }
        for t in &c.timings {
            if let TimingTarget::Method(m) = &t.target {
                check(m)?;
            }
        }
        for r in &c.control_flow {
            check(&r.forbidden)?;
            check(&r.prerequisite)?;
        }
        Ok(())
    }
}

/// Parse a set of contract texts plus a repository text into a model.
pub fn load_software_model<S: AsRef<str>>(
    contract_texts: &[S],
    repository_text: &str,
) -> Result<SoftwareModel, DslError> {
    let services = parse_service_repository(repository_text)?;
    let contracts = contract_texts
        .iter()
        .map(|t| parse_contract(t.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    SoftwareModel::from_contracts(contracts, services)
}
