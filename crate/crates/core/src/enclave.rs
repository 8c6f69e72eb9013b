//! Simulated trusted-execution lifecycle for confidential workflows:
//! build a measured image, launch it on a CC-capable node, validate the
//! node's attestation document with a certifier, terminate and wipe.
//!
//! Attestation uses HMAC-SHA256 under a per-node key that the certifier
//! registers when the fleet is provisioned. Nonces are issued by the
//! certifier and accepted once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fleet::{VecNode, Workflow};
use crate::rng::{self, SimRng};

type HmacSha256 = Hmac<Sha256>;

pub type Measurement = [u8; 32];
pub type Nonce = [u8; 16];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnclaveError {
    #[error("workflow {0} does not require confidential computing")]
    NotConfidential(u64),
    #[error("node {0} is not confidential-computing capable")]
    NotCcCapable(usize),
    #[error("node {0} has no key registered with the certifier")]
    UnregisteredNode(usize),
    #[error("attestation measurement does not match the expected image")]
    MeasurementMismatch,
    #[error("attestation tag does not verify")]
    BadTag,
    #[error("attestation nonce was never issued or has already been used")]
    StaleNonce,
    #[error("illegal enclave transition {from} -> {to}")]
    IllegalTransition { from: EnclaveState, to: EnclaveState },
    #[error("enclave has been terminated")]
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnclaveState {
    Built,
    Running,
    Attested,
    Terminated,
}

impl EnclaveState {
    pub const ALL: [EnclaveState; 4] =
        [EnclaveState::Built, EnclaveState::Running, EnclaveState::Attested, EnclaveState::Terminated];

    /// Built -> Running -> Attested -> Terminated, and anything -> Terminated.
    pub fn can_transition(self, to: EnclaveState) -> bool {
        use EnclaveState::*;
        matches!((self, to), (Built, Running) | (Running, Attested) | (_, Terminated))
    }
}

impl fmt::Display for EnclaveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclaveImage {
    pub workflow_id: u64,
    pub measurement: Measurement,
    pub sealed: bool,
}

pub fn measure(descriptor: &[u8]) -> Measurement {
    Sha256::digest(descriptor).into()
}

pub fn build_enclave(w: &Workflow) -> Result<EnclaveImage, EnclaveError> {
    if !w.cc_required {
        return Err(EnclaveError::NotConfidential(w.workflow_id));
    }
    Ok(EnclaveImage { workflow_id: w.workflow_id, measurement: measure(&w.descriptor()), sealed: true })
}

#[derive(Clone, PartialEq, Eq)]
pub struct NodeKey([u8; 32]);

impl NodeKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        NodeKey(bytes)
    }
}

impl fmt::Debug for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("NodeKey(..)")
    }
}

/// Per-node attestation keys derived from the run seed.
pub fn provision_keys(fleet: &[VecNode], seed: u64) -> BTreeMap<usize, NodeKey> {
    fleet
        .iter()
        .filter(|n| n.cc_capable)
        .map(|n| {
            let mut rng = rng::stream_rng(seed, &[rng::CERTIFIER, n.node_id as u64]);
            (n.node_id, NodeKey(rng.random()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationDocument {
    pub enclave_id: u64,
    pub node_id: usize,
    pub measurement: Measurement,
    pub nonce: Nonce,
    pub tag: [u8; 32],
}

fn mac_for(key: &NodeKey, enclave_id: u64, node_id: usize, measurement: &Measurement, nonce: &Nonce) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(&key.0).expect("HMAC accepts any key length");
    mac.update(&enclave_id.to_le_bytes());
    mac.update(&(node_id as u64).to_le_bytes());
    mac.update(measurement);
    mac.update(nonce);
    mac
}

/// Node-side: sign an attestation document with the node's key.
pub fn sign_document(key: &NodeKey, enclave_id: u64, node_id: usize, measurement: Measurement, nonce: Nonce) -> AttestationDocument {
    let tag = mac_for(key, enclave_id, node_id, &measurement, &nonce).finalize().into_bytes().into();
    AttestationDocument { enclave_id, node_id, measurement, nonce, tag }
}

/// Holds registered node keys and the nonce ledger.
#[derive(Debug)]
pub struct Certifier {
    keys: BTreeMap<usize, NodeKey>,
    outstanding: BTreeSet<Nonce>,
    rng: SimRng,
    next_enclave_id: u64,
}

impl Certifier {
    pub fn new(seed: u64) -> Self {
        Certifier {
            keys: BTreeMap::new(),
            outstanding: BTreeSet::new(),
            rng: rng::stream_rng(seed, &[rng::CERTIFIER, u64::MAX]),
            next_enclave_id: 0,
        }
    }

    pub fn with_keys(seed: u64, keys: &BTreeMap<usize, NodeKey>) -> Self {
        let mut c = Certifier::new(seed);
        for (&id, key) in keys {
            c.register(id, key.clone());
        }
        c
    }

    pub fn register(&mut self, node_id: usize, key: NodeKey) {
        self.keys.insert(node_id, key);
    }

    pub fn is_registered(&self, node_id: usize) -> bool {
        self.keys.contains_key(&node_id)
    }

    pub fn issue_nonce(&mut self) -> Nonce {
        let nonce: Nonce = self.rng.random();
        self.outstanding.insert(nonce);
        nonce
    }

    fn allocate_enclave_id(&mut self) -> u64 {
        self.next_enclave_id += 1;
        self.next_enclave_id
    }

    /// Checks tag, measurement and nonce freshness. A nonce is consumed only
    /// by a document that verifies.
    pub fn verify(&mut self, doc: &AttestationDocument, expected: &Measurement) -> Result<(), EnclaveError> {
        let key = self.keys.get(&doc.node_id).ok_or(EnclaveError::UnregisteredNode(doc.node_id))?;
        mac_for(key, doc.enclave_id, doc.node_id, &doc.measurement, &doc.nonce)
            .verify_slice(&doc.tag)
            .map_err(|_| EnclaveError::BadTag)?;
        if &doc.measurement != expected {
            return Err(EnclaveError::MeasurementMismatch);
        }
        if !self.outstanding.remove(&doc.nonce) {
            return Err(EnclaveError::StaleNonce);
        }
        Ok(())
    }
}

/// A launched enclave. Sensitive contents are dropped on termination.
#[derive(Debug)]
pub struct Enclave {
    pub id: u64,
    pub node_id: usize,
    pub workflow_id: u64,
    state: EnclaveState,
    contents: Option<EnclaveImage>,
}

impl Enclave {
    pub fn new(id: u64, node_id: usize, image: EnclaveImage) -> Self {
        Enclave { id, node_id, workflow_id: image.workflow_id, state: EnclaveState::Built, contents: Some(image) }
    }

    pub fn state(&self) -> EnclaveState {
        self.state
    }

    pub fn transition(&mut self, to: EnclaveState) -> Result<(), EnclaveError> {
        if self.state == EnclaveState::Terminated && to == EnclaveState::Terminated {
            return Ok(());
        }
        if !self.state.can_transition(to) {
            return Err(EnclaveError::IllegalTransition { from: self.state, to });
        }
        self.state = to;
        if to == EnclaveState::Terminated {
            self.contents = None;
        }
        Ok(())
    }

    /// The image held inside the enclave; unavailable once terminated.
    pub fn contents(&self) -> Result<&EnclaveImage, EnclaveError> {
        self.contents.as_ref().ok_or(EnclaveError::Terminated)
    }

    pub fn is_attested(&self) -> bool {
        self.state == EnclaveState::Attested
    }
}

/// Launch `image` on `node`, have the node sign an attestation over a fresh
/// certifier nonce, and verify it. The enclave is returned in `Attested`.
pub fn launch_and_attest(
    image: &EnclaveImage,
    node: &VecNode,
    node_key: Option<&NodeKey>,
    certifier: &mut Certifier,
) -> Result<(Enclave, AttestationDocument), EnclaveError> {
    if !node.cc_capable {
        return Err(EnclaveError::NotCcCapable(node.node_id));
    }
    let key = node_key.ok_or(EnclaveError::UnregisteredNode(node.node_id))?;
    if !certifier.is_registered(node.node_id) {
        return Err(EnclaveError::UnregisteredNode(node.node_id));
    }
    let mut enclave = Enclave::new(certifier.allocate_enclave_id(), node.node_id, image.clone());
    enclave.transition(EnclaveState::Running)?;
    let nonce = certifier.issue_nonce();
    let doc = sign_document(key, enclave.id, node.node_id, image.measurement, nonce);
    if let Err(e) = certifier.verify(&doc, &image.measurement) {
        enclave.transition(EnclaveState::Terminated)?;
        return Err(e);
    }
    enclave.transition(EnclaveState::Attested)?;
    Ok((enclave, doc))
}

pub fn terminate_enclave(enclave: &mut Enclave) -> EnclaveState {
    enclave
        .transition(EnclaveState::Terminated)
        .expect("termination is legal from every state");
    EnclaveState::Terminated
}
