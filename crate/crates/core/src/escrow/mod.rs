//! Token balances, the participant registry, and the escrow contract engine.
//!
//! ## Collateral scheme
//!
//! One contract sells one item once. The owner deploys it with an even
//! deposit `d`, which fixes the price at exactly `d / 2`. The buyer then
//! pays twice the price (their matching collateral), locking the contract
//! with balance `2d`. On confirmed delivery the contract refunds the buyer
//! half of what they paid and releases deposit-plus-price to the owner:
//!
//! ```text
//! deploy   owner  -d        contract balance  d
//! pay      buyer  -2·(d/2)  contract balance  2d
//! settle   buyer  +d/2, owner +d+d/2, contract balance 0
//! ```
//!
//! Net effect of a completed sale: owner +price, buyer −price, both sides
//! having risked collateral while the sale was open. All arithmetic is exact
//! integer arithmetic; odd deposits are rejected outright.
//!
//! ## States, events, gas
//!
//! A contract moves `Created → Locked → Inactive` and never backwards. Every
//! state mutation emits exactly one event, so a contract's audit trail *is*
//! its mutation history. Calls are metered against a [`gas::GasSchedule`];
//! failed calls consume only the call base and mutate nothing (validation
//! runs before any state change). Gas is accounting, never charged against
//! token balances, so token supply is conserved by construction — the tests
//! assert it anyway.
//!
//! An optional timeout-refund extension (off by default) lets the owner
//! unwind a contract stuck in `Locked`: both sides get their stake back and
//! nobody profits. Without it, an unconfirmed delivery strands the funds —
//! that is the documented cost of the plain protocol.

pub mod gas;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::digest::Digest;
use crate::types::{Address, TokenAmount};
use gas::{fee_wei, GasOp, GasSchedule};

/// Default per-call gas ceiling.
pub const DEFAULT_GAS_LIMIT: u64 = 4_712_388;
/// Default gas price: 25 Gwei.
pub const DEFAULT_GAS_PRICE_WEI: u64 = 25 * gas::GWEI;

#[derive(Debug, Error)]
pub enum EscrowError {
    #[error("address {0} is already registered for that role")]
    DuplicateRegistration(Address),
    #[error("caller {0} is not authorized for this call")]
    Unauthorized(Address),
    #[error("insufficient funds: {addr} holds {available}, needs {needed}")]
    InsufficientFunds {
        addr: Address,
        available: TokenAmount,
        needed: TokenAmount,
    },
    #[error("deposit must be positive and even, got {0}")]
    OddDeposit(TokenAmount),
    #[error("call is not valid in contract state {0}")]
    WrongState(ContractState),
    #[error("an owner cannot buy its own item")]
    SelfDealing,
    #[error("gas limit exceeded: call needs {needed}, limit is {limit}")]
    GasLimitExceeded { needed: u64, limit: u64 },
    #[error("no contract at {0}")]
    UnknownContract(Address),
    #[error("the timeout-refund extension is disabled")]
    TimeoutRefundDisabled,
    #[error("contract has been locked {elapsed} ticks, refund allowed after {threshold}")]
    TimeoutNotReached { elapsed: u64, threshold: u64 },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    Owner,
    Consumer,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, PartialOrd, Ord)]
pub enum ContractState {
    Created,
    Locked,
    Inactive,
}

impl fmt::Display for ContractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContractState::Created => "Created",
            ContractState::Locked => "Locked",
            ContractState::Inactive => "Inactive",
        })
    }
}

/// Who may do what, and the published encryption key of each participant.
#[derive(Clone, Default)]
pub struct Registry {
    owners: BTreeSet<Address>,
    consumers: BTreeSet<Address>,
    contracts: BTreeSet<Address>,
    pubkeys: BTreeMap<Address, Vec<u8>>,
}

impl Registry {
    pub fn register(
        &mut self,
        addr: Address,
        role: Role,
        public_key: &[u8],
    ) -> Result<(), EscrowError> {
        let set = match role {
            Role::Owner => &mut self.owners,
            Role::Consumer => &mut self.consumers,
        };
        if set.contains(&addr) {
            return Err(EscrowError::DuplicateRegistration(addr));
        }
        if let Some(existing) = self.pubkeys.get(&addr) {
            if existing != public_key {
                // Re-registering under a different key would silently rotate
                // an identity; refuse.
                return Err(EscrowError::DuplicateRegistration(addr));
            }
        }
        set.insert(addr);
        self.pubkeys.insert(addr, public_key.to_vec());
        Ok(())
    }

    pub fn is_owner(&self, addr: &Address) -> bool {
        self.owners.contains(addr)
    }

    pub fn is_consumer(&self, addr: &Address) -> bool {
        self.consumers.contains(addr)
    }

    pub fn is_contract(&self, addr: &Address) -> bool {
        self.contracts.contains(addr)
    }

    pub fn public_key_of(&self, addr: &Address) -> Option<&[u8]> {
        self.pubkeys.get(addr).map(Vec::as_slice)
    }

    fn add_contract(&mut self, addr: Address) {
        self.contracts.insert(addr);
    }
}

/// One audit-trail entry. `name` is what happened; `function` is the call
/// that made it happen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub contract: Address,
    pub name: String,
    pub function: String,
    pub actor: Address,
    pub state_after: ContractState,
    pub amounts: BTreeMap<String, TokenAmount>,
    pub block_height: u64,
}

/// A single-item escrow contract.
#[derive(Clone, Debug)]
pub struct EscrowContract {
    pub addr: Address,
    pub owner: Address,
    pub consumer: Option<Address>,
    pub item_id: Digest,
    pub state: ContractState,
    pub deposit: TokenAmount,
    pub price: TokenAmount,
    pub balance: TokenAmount,
    pub delivered: bool,
    pub locked_at_tick: Option<u64>,
    pub events: Vec<Event>,
    pub mutations: u64,
}

/// Provenance registration for published research.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProvenanceRecord {
    pub research_id: String,
    pub researcher: Address,
    pub metadata: BTreeMap<String, String>,
    /// Set once the record is anchored in a chain transaction.
    pub tx_id: Option<Digest>,
}

/// Receipt of one metered contract call.
#[derive(Clone, Debug)]
pub struct CallReceipt {
    pub function: String,
    pub contract: Option<Address>,
    pub state_after: Option<ContractState>,
    pub gas_used: u64,
    pub fee_wei: u128,
    pub ok: bool,
    /// Block slot the call confirms in.
    pub confirm_slot: u64,
    /// Slots waited between submission and confirmation; one by construction,
    /// since every call confirms in the next sealed block.
    pub blocks_waited: u64,
}

/// The contract functions exposed to the 3×3×3 call matrix.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ContractFunction {
    ContractDeploy,
    ConsumerPay,
    PaymentSettle,
}

/// The escrow engine: balances, registry, contracts, metering.
pub struct EscrowEnv {
    pub registry: Registry,
    balances: BTreeMap<Address, TokenAmount>,
    contracts: BTreeMap<Address, EscrowContract>,
    contract_order: Vec<Address>,
    schedule: GasSchedule,
    pub gas_price_wei: u64,
    pub gas_limit: u64,
    receipts: Vec<CallReceipt>,
    /// Ticks a contract must sit in `Locked` before a timeout refund; `None`
    /// keeps the extension disabled (the default).
    pub timeout_refund_after: Option<u64>,
    block_height: u64,
    tick: u64,
    deploy_seq: u64,
}

impl EscrowEnv {
    pub fn new(schedule: GasSchedule, gas_price_wei: u64, gas_limit: u64) -> EscrowEnv {
        EscrowEnv {
            registry: Registry::default(),
            balances: BTreeMap::new(),
            contracts: BTreeMap::new(),
            contract_order: Vec::new(),
            schedule,
            gas_price_wei,
            gas_limit,
            receipts: Vec::new(),
            timeout_refund_after: None,
            block_height: 1,
            tick: 0,
            deploy_seq: 0,
        }
    }

    pub fn schedule(&self) -> &GasSchedule {
        &self.schedule
    }

    /// Mints setup funds. Supply-conservation properties measure after setup.
    pub fn fund(&mut self, addr: Address, amount: TokenAmount) {
        *self.balances.entry(addr).or_insert(0) += amount;
    }

    pub fn balance_of(&self, addr: &Address) -> TokenAmount {
        self.balances.get(addr).copied().unwrap_or(0)
    }

    /// Total tokens across every account and contract.
    pub fn total_supply(&self) -> TokenAmount {
        self.balances.values().sum()
    }

    pub fn contract(&self, addr: &Address) -> Option<&EscrowContract> {
        self.contracts.get(addr)
    }

    pub fn contracts_in_order(&self) -> impl Iterator<Item = &EscrowContract> {
        self.contract_order.iter().map(|a| &self.contracts[a])
    }

    pub fn receipts(&self) -> &[CallReceipt] {
        &self.receipts
    }

    /// The full ordered event trail of one contract.
    pub fn audit_trail(&self, addr: &Address) -> Result<&[Event], EscrowError> {
        self.contracts
            .get(addr)
            .map(|c| c.events.as_slice())
            .ok_or(EscrowError::UnknownContract(*addr))
    }

    /// Where the next call will confirm; driven by the simulation clock.
    pub fn set_block_height(&mut self, height: u64) {
        self.block_height = height;
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    /// A digest of all engine state that contract calls may mutate: balances,
    /// contract fields, trails. Receipts are observability, not state, and
    /// are excluded. Used to assert that rejected calls changed nothing.
    pub fn fingerprint(&self) -> String {
        let mut out = String::new();
        for (addr, bal) in &self.balances {
            out.push_str(&format!("{addr}={bal};"));
        }
        for addr in &self.contract_order {
            let c = &self.contracts[addr];
            out.push_str(&format!(
                "{}:{}:{:?}:{}:{}:{}:{}:{};",
                c.addr, c.state, c.consumer, c.deposit, c.price, c.balance, c.delivered, c.mutations
            ));
            for e in &c.events {
                out.push_str(&format!("{}:{}:{};", e.seq, e.name, e.actor));
            }
        }
        out
    }

    fn transfer(
        &mut self,
        from: Address,
        to: Address,
        amount: TokenAmount,
    ) -> Result<(), EscrowError> {
        let available = self.balance_of(&from);
        if available < amount {
            return Err(EscrowError::InsufficientFunds {
                addr: from,
                available,
                needed: amount,
            });
        }
        *self.balances.get_mut(&from).expect("checked above") -= amount;
        *self.balances.entry(to).or_insert(0) += amount;
        for addr in [from, to] {
            if let Some(c) = self.contracts.get_mut(&addr) {
                c.balance = self.balances[&addr];
            }
        }
        Ok(())
    }

    fn require_funds(&self, addr: &Address, needed: TokenAmount) -> Result<(), EscrowError> {
        let available = self.balance_of(addr);
        if available < needed {
            return Err(EscrowError::InsufficientFunds {
                addr: *addr,
                available,
                needed,
            });
        }
        Ok(())
    }

    fn charge_gas(&self, function: &str, base: u64, trace: &[GasOp]) -> Result<u64, EscrowError> {
        let needed = self.schedule.gas_for(function, base, trace);
        if needed > self.gas_limit {
            return Err(EscrowError::GasLimitExceeded {
                needed,
                limit: self.gas_limit,
            });
        }
        Ok(needed)
    }

    fn record_receipt(
        &mut self,
        function: &str,
        contract: Option<Address>,
        state_after: Option<ContractState>,
        gas_used: u64,
        ok: bool,
    ) {
        self.receipts.push(CallReceipt {
            function: function.to_string(),
            contract,
            state_after,
            gas_used,
            fee_wei: fee_wei(gas_used, self.gas_price_wei),
            ok,
            confirm_slot: self.block_height,
            blocks_waited: 1,
        });
    }

    fn emit(
        contract: &mut EscrowContract,
        name: &str,
        function: &str,
        actor: Address,
        amounts: BTreeMap<String, TokenAmount>,
        block_height: u64,
    ) {
        contract.mutations += 1;
        contract.events.push(Event {
            seq: contract.mutations,
            contract: contract.addr,
            name: name.to_string(),
            function: function.to_string(),
            actor,
            state_after: contract.state,
            amounts,
            block_height,
        });
    }

    /// Deploys a sale contract for `item_id` with deposit `deposit` (even,
    /// positive). Gas trace: 5 state writes, 1 value transfer, 1 event.
    pub fn deploy_contract(
        &mut self,
        owner: Address,
        deposit: TokenAmount,
        item_id: Digest,
    ) -> Result<Address, EscrowError> {
        const FUNCTION: &str = "contractDeploy";
        const TRACE: &[GasOp] = &[
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::ValueTransfer,
            GasOp::EventEmit,
        ];
        let outcome = (|| {
            if !self.registry.is_owner(&owner) {
                return Err(EscrowError::Unauthorized(owner));
            }
            if deposit == 0 || deposit % 2 != 0 {
                return Err(EscrowError::OddDeposit(deposit));
            }
            self.require_funds(&owner, deposit)?;
            self.charge_gas(FUNCTION, self.schedule.deploy_base, TRACE)
        })();
        let gas = match outcome {
            Ok(gas) => gas,
            Err(e) => {
                self.record_receipt(FUNCTION, None, None, self.schedule.call_base, false);
                return Err(e);
            }
        };

        let addr = Address::contract(&owner, &item_id, self.deploy_seq);
        self.deploy_seq += 1;
        let mut contract = EscrowContract {
            addr,
            owner,
            consumer: None,
            item_id,
            state: ContractState::Created,
            deposit,
            price: deposit / 2,
            balance: 0,
            delivered: false,
            locked_at_tick: None,
            events: Vec::new(),
            mutations: 0,
        };
        self.balances.entry(addr).or_insert(0);
        let mut amounts = BTreeMap::new();
        amounts.insert("deposit".to_string(), deposit);
        EscrowEnv::emit(&mut contract, "Deployed", FUNCTION, owner, amounts, self.block_height);
        self.contracts.insert(addr, contract);
        self.contract_order.push(addr);
        self.registry.add_contract(addr);
        self.transfer(owner, addr, deposit)
            .expect("funds were checked before mutation");
        self.record_receipt(FUNCTION, Some(addr), Some(ContractState::Created), gas, true);
        Ok(addr)
    }

    /// Buyer call: locks the contract by paying twice the price. Gas trace:
    /// 3 state writes, 1 value transfer, 2 events (payment + access grant).
    pub fn consumer_pay(&mut self, contract: Address, caller: Address) -> Result<(), EscrowError> {
        const FUNCTION: &str = "consumerPay";
        const TRACE: &[GasOp] = &[
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::ValueTransfer,
            GasOp::EventEmit,
            GasOp::EventEmit,
        ];
        let outcome = (|| {
            let c = self
                .contracts
                .get(&contract)
                .ok_or(EscrowError::UnknownContract(contract))?;
            if c.state != ContractState::Created {
                return Err(EscrowError::WrongState(c.state));
            }
            if caller == c.owner {
                return Err(EscrowError::SelfDealing);
            }
            if !self.registry.is_consumer(&caller) {
                return Err(EscrowError::Unauthorized(caller));
            }
            self.require_funds(&caller, 2 * c.price)?;
            self.charge_gas(FUNCTION, self.schedule.call_base, TRACE)
        })();
        let gas = match outcome {
            Ok(gas) => gas,
            Err(e) => {
                self.record_receipt(FUNCTION, Some(contract), None, self.schedule.call_base, false);
                return Err(e);
            }
        };

        let (payment, height) = {
            let c = &self.contracts[&contract];
            (2 * c.price, self.block_height)
        };
        self.transfer(caller, contract, payment)
            .expect("funds were checked before mutation");
        let tick = self.tick;
        let c = self.contracts.get_mut(&contract).expect("checked above");
        c.consumer = Some(caller);
        c.state = ContractState::Locked;
        c.locked_at_tick = Some(tick);
        let mut amounts = BTreeMap::new();
        amounts.insert("payment".to_string(), payment);
        EscrowEnv::emit(c, "Paid", FUNCTION, caller, amounts, height);
        EscrowEnv::emit(c, "AccessGranted", FUNCTION, caller, BTreeMap::new(), height);
        self.record_receipt(FUNCTION, Some(contract), Some(ContractState::Locked), gas, true);
        Ok(())
    }

    /// Bookkeeping step driven by the delivery pipeline, not a metered
    /// contract call: records that content reached the buyer.
    pub fn record_delivery(&mut self, contract: Address, caller: Address) -> Result<(), EscrowError> {
        let height = self.block_height;
        let c = self
            .contracts
            .get_mut(&contract)
            .ok_or(EscrowError::UnknownContract(contract))?;
        if c.state != ContractState::Locked || c.delivered {
            return Err(EscrowError::WrongState(c.state));
        }
        if c.consumer != Some(caller) {
            return Err(EscrowError::Unauthorized(caller));
        }
        c.delivered = true;
        EscrowEnv::emit(c, "Delivered", "dataDelivery", caller, BTreeMap::new(), height);
        Ok(())
    }

    /// Bookkeeping for a delivery that could not complete; evidence for later
    /// disputes. The contract stays `Locked`.
    pub fn record_delivery_failure(
        &mut self,
        contract: Address,
        caller: Address,
    ) -> Result<(), EscrowError> {
        let height = self.block_height;
        let c = self
            .contracts
            .get_mut(&contract)
            .ok_or(EscrowError::UnknownContract(contract))?;
        if c.state != ContractState::Locked {
            return Err(EscrowError::WrongState(c.state));
        }
        if c.consumer != Some(caller) {
            return Err(EscrowError::Unauthorized(caller));
        }
        EscrowEnv::emit(c, "DeliveryFailed", "dataDelivery", caller, BTreeMap::new(), height);
        Ok(())
    }

    /// Buyer call: confirms delivery and settles. The buyer gets the price
    /// back out of their doubled payment; the owner receives deposit + price.
    /// Gas trace: 3 state writes, 2 value transfers, 2 events.
    pub fn confirm_delivery(&mut self, contract: Address, caller: Address) -> Result<(), EscrowError> {
        const FUNCTION: &str = "paymentSettle";
        const TRACE: &[GasOp] = &[
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::ValueTransfer,
            GasOp::ValueTransfer,
            GasOp::EventEmit,
            GasOp::EventEmit,
        ];
        let outcome = (|| {
            let c = self
                .contracts
                .get(&contract)
                .ok_or(EscrowError::UnknownContract(contract))?;
            if c.state != ContractState::Locked {
                return Err(EscrowError::WrongState(c.state));
            }
            if c.consumer != Some(caller) {
                return Err(EscrowError::Unauthorized(caller));
            }
            self.charge_gas(FUNCTION, self.schedule.call_base, TRACE)
        })();
        let gas = match outcome {
            Ok(gas) => gas,
            Err(e) => {
                self.record_receipt(FUNCTION, Some(contract), None, self.schedule.call_base, false);
                return Err(e);
            }
        };

        let (owner, price, deposit, height) = {
            let c = &self.contracts[&contract];
            (c.owner, c.price, c.deposit, self.block_height)
        };
        {
            let c = self.contracts.get_mut(&contract).expect("checked above");
            c.state = ContractState::Inactive;
            EscrowEnv::emit(c, "Confirmed", FUNCTION, caller, BTreeMap::new(), height);
        }
        self.transfer(contract, caller, price)
            .expect("locked contract holds 2×deposit");
        self.transfer(contract, owner, deposit + price)
            .expect("locked contract holds 2×deposit");
        {
            let c = self.contracts.get_mut(&contract).expect("checked above");
            let mut amounts = BTreeMap::new();
            amounts.insert("refund".to_string(), price);
            amounts.insert("payout".to_string(), deposit + price);
            EscrowEnv::emit(c, "Settled", FUNCTION, caller, amounts, height);
        }
        self.record_receipt(FUNCTION, Some(contract), Some(ContractState::Inactive), gas, true);
        Ok(())
    }

    /// Optional extension: after `timeout_refund_after` ticks in `Locked`,
    /// the owner may unwind the sale — buyer repaid in full, deposit back to
    /// the owner, contract closed with nobody ahead.
    pub fn timeout_refund(&mut self, contract: Address, caller: Address) -> Result<(), EscrowError> {
        const FUNCTION: &str = "timeoutRefund";
        const TRACE: &[GasOp] = &[
            GasOp::StateWrite,
            GasOp::StateWrite,
            GasOp::ValueTransfer,
            GasOp::ValueTransfer,
            GasOp::EventEmit,
            GasOp::EventEmit,
        ];
        let outcome = (|| {
            let threshold = self
                .timeout_refund_after
                .ok_or(EscrowError::TimeoutRefundDisabled)?;
            let c = self
                .contracts
                .get(&contract)
                .ok_or(EscrowError::UnknownContract(contract))?;
            if c.state != ContractState::Locked {
                return Err(EscrowError::WrongState(c.state));
            }
            if caller != c.owner {
                return Err(EscrowError::Unauthorized(caller));
            }
            let elapsed = self.tick.saturating_sub(c.locked_at_tick.unwrap_or(0));
            if elapsed < threshold {
                return Err(EscrowError::TimeoutNotReached {
                    elapsed,
                    threshold,
                });
            }
            self.charge_gas(FUNCTION, self.schedule.call_base, TRACE)
        })();
        let gas = match outcome {
            Ok(gas) => gas,
            Err(e) => {
                self.record_receipt(FUNCTION, Some(contract), None, self.schedule.call_base, false);
                return Err(e);
            }
        };

        let (consumer, price, deposit, height) = {
            let c = &self.contracts[&contract];
            (
                c.consumer.expect("locked contracts have a consumer"),
                c.price,
                c.deposit,
                self.block_height,
            )
        };
        {
            let c = self.contracts.get_mut(&contract).expect("checked above");
            c.state = ContractState::Inactive;
            EscrowEnv::emit(c, "Aborted", FUNCTION, caller, BTreeMap::new(), height);
        }
        self.transfer(contract, consumer, 2 * price)
            .expect("locked contract holds 2×deposit");
        self.transfer(contract, caller, deposit)
            .expect("locked contract holds 2×deposit");
        {
            let c = self.contracts.get_mut(&contract).expect("checked above");
            let mut amounts = BTreeMap::new();
            amounts.insert("refund_consumer".to_string(), 2 * price);
            amounts.insert("refund_owner".to_string(), deposit);
            EscrowEnv::emit(c, "Refunded", FUNCTION, caller, amounts, height);
        }
        self.record_receipt(FUNCTION, Some(contract), Some(ContractState::Inactive), gas, true);
        Ok(())
    }

    /// Registers research provenance. The record is returned for anchoring in
    /// a chain transaction; metering: 1 state write + 1 event on the call base.
    pub fn commit_provenance(
        &mut self,
        researcher: Address,
        research_id: &str,
        metadata: BTreeMap<String, String>,
    ) -> Result<ProvenanceRecord, EscrowError> {
        const FUNCTION: &str = "provenanceCommit";
        const TRACE: &[GasOp] = &[GasOp::StateWrite, GasOp::EventEmit];
        let outcome = (|| {
            if !self.registry.is_owner(&researcher) && !self.registry.is_consumer(&researcher) {
                return Err(EscrowError::Unauthorized(researcher));
            }
            self.charge_gas(FUNCTION, self.schedule.call_base, TRACE)
        })();
        let gas = match outcome {
            Ok(gas) => gas,
            Err(e) => {
                self.record_receipt(FUNCTION, None, None, self.schedule.call_base, false);
                return Err(e);
            }
        };
        self.record_receipt(FUNCTION, None, None, gas, true);
        Ok(ProvenanceRecord {
            research_id: research_id.to_string(),
            researcher,
            metadata,
            tx_id: None,
        })
    }

    /// Uniform entry point for the state × function × caller matrix.
    /// `ContractDeploy` against an existing contract is always `WrongState`:
    /// a constructor cannot run twice.
    pub fn call(
        &mut self,
        contract: Address,
        function: ContractFunction,
        caller: Address,
    ) -> Result<(), EscrowError> {
        match function {
            ContractFunction::ContractDeploy => {
                let state = self
                    .contracts
                    .get(&contract)
                    .map(|c| c.state)
                    .ok_or(EscrowError::UnknownContract(contract))?;
                self.record_receipt(
                    "contractDeploy",
                    Some(contract),
                    None,
                    self.schedule.call_base,
                    false,
                );
                let _ = caller;
                Err(EscrowError::WrongState(state))
            }
            ContractFunction::ConsumerPay => self.consumer_pay(contract, caller),
            ContractFunction::PaymentSettle => self.confirm_delivery(contract, caller),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(tag: u8) -> Address {
        Address([tag; 20])
    }

    fn item(tag: u8) -> Digest {
        Digest::of(&[tag])
    }

    /// Env with one owner (1), two consumers (2, 3), all funded 10_000.
    fn env() -> EscrowEnv {
        let mut e = EscrowEnv::new(
            GasSchedule::default_schedule(),
            DEFAULT_GAS_PRICE_WEI,
            DEFAULT_GAS_LIMIT,
        );
        e.registry.register(addr(1), Role::Owner, b"pk1").unwrap();
        e.registry.register(addr(2), Role::Consumer, b"pk2").unwrap();
        e.registry.register(addr(3), Role::Consumer, b"pk3").unwrap();
        e.fund(addr(1), 10_000);
        e.fund(addr(2), 10_000);
        e.fund(addr(3), 10_000);
        e
    }

    /// Hand-checked happy path with deposit 1000:
    ///   price 500; owner 10000→9000→… settle …→10500 (net +500)
    ///   buyer 10000→9000 (paid 1000) → 9500 after refund (net −500)
    ///   contract balance 1000 → 2000 → 0
    #[test]
    fn full_sale_arithmetic_by_hand() {
        let mut e = env();
        let supply = e.total_supply();
        let c = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        assert_eq!(e.balance_of(&addr(1)), 9_000);
        assert_eq!(e.balance_of(&c), 1_000);
        let got = e.contract(&c).unwrap();
        assert_eq!(got.price, 500);
        assert_eq!(got.state, ContractState::Created);

        e.consumer_pay(c, addr(2)).unwrap();
        assert_eq!(e.balance_of(&addr(2)), 9_000);
        assert_eq!(e.balance_of(&c), 2_000);
        assert_eq!(e.contract(&c).unwrap().state, ContractState::Locked);

        e.record_delivery(c, addr(2)).unwrap();
        e.confirm_delivery(c, addr(2)).unwrap();
        assert_eq!(e.balance_of(&c), 0);
        assert_eq!(e.balance_of(&addr(1)), 10_500, "owner nets +price");
        assert_eq!(e.balance_of(&addr(2)), 9_500, "buyer nets −price");
        assert_eq!(e.contract(&c).unwrap().state, ContractState::Inactive);
        assert_eq!(e.total_supply(), supply, "gas never touches balances");

        let names: Vec<&str> = e
            .audit_trail(&c)
            .unwrap()
            .iter()
            .map(|ev| ev.name.as_str())
            .collect();
        assert_eq!(
            names,
            ["Deployed", "Paid", "AccessGranted", "Delivered", "Confirmed", "Settled"]
        );
        let trail = e.audit_trail(&c).unwrap();
        assert_eq!(trail.len() as u64, e.contract(&c).unwrap().mutations);
        assert!(trail.windows(2).all(|w| w[0].seq + 1 == w[1].seq));
        assert_eq!(trail[5].amounts["refund"], 500);
        assert_eq!(trail[5].amounts["payout"], 1_500);
    }

    #[test]
    fn deploy_rejections() {
        let mut e = env();
        assert!(matches!(
            e.deploy_contract(addr(9), 1000, item(1)),
            Err(EscrowError::Unauthorized(_))
        ));
        assert!(matches!(
            e.deploy_contract(addr(1), 999, item(1)),
            Err(EscrowError::OddDeposit(999))
        ));
        assert!(matches!(
            e.deploy_contract(addr(1), 0, item(1)),
            Err(EscrowError::OddDeposit(0))
        ));
        assert!(matches!(
            e.deploy_contract(addr(1), 20_000, item(1)),
            Err(EscrowError::InsufficientFunds { .. })
        ));
        // Failed deploys leave no contract behind and consume only call base.
        assert_eq!(e.contracts_in_order().count(), 0);
        assert!(e.receipts().iter().all(|r| !r.ok));
        assert!(e
            .receipts()
            .iter()
            .all(|r| r.gas_used == e.schedule().call_base));
    }

    #[test]
    fn pay_rejections_in_checking_order() {
        let mut e = env();
        let c = e.deploy_contract(addr(1), 1000, item(1)).unwrap();

        // Owner buying own item: SelfDealing even though the owner is not a
        // registered consumer (self-dealing is checked first).
        assert!(matches!(
            e.consumer_pay(c, addr(1)),
            Err(EscrowError::SelfDealing)
        ));
        // Unregistered stranger: Unauthorized.
        assert!(matches!(
            e.consumer_pay(c, addr(9)),
            Err(EscrowError::Unauthorized(_))
        ));
        // Broke consumer: InsufficientFunds.
        let mut broke = EscrowEnv::new(
            GasSchedule::default_schedule(),
            DEFAULT_GAS_PRICE_WEI,
            DEFAULT_GAS_LIMIT,
        );
        broke.registry.register(addr(1), Role::Owner, b"pk1").unwrap();
        broke.registry.register(addr(2), Role::Consumer, b"pk2").unwrap();
        broke.fund(addr(1), 2_000);
        broke.fund(addr(2), 300);
        let bc = broke.deploy_contract(addr(1), 1000, item(1)).unwrap();
        assert!(matches!(
            broke.consumer_pay(bc, addr(2)),
            Err(EscrowError::InsufficientFunds { needed: 1000, .. })
        ));

        // After locking, a second pay is WrongState — state precedes all
        // other checks, including self-dealing.
        e.consumer_pay(c, addr(2)).unwrap();
        assert!(matches!(
            e.consumer_pay(c, addr(3)),
            Err(EscrowError::WrongState(ContractState::Locked))
        ));
        assert!(matches!(
            e.consumer_pay(c, addr(1)),
            Err(EscrowError::WrongState(ContractState::Locked))
        ));
    }

    #[test]
    fn settle_requires_locked_and_recorded_consumer() {
        let mut e = env();
        let c = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        assert!(matches!(
            e.confirm_delivery(c, addr(2)),
            Err(EscrowError::WrongState(ContractState::Created))
        ));
        e.consumer_pay(c, addr(2)).unwrap();
        assert!(matches!(
            e.confirm_delivery(c, addr(1)),
            Err(EscrowError::Unauthorized(_))
        ));
        assert!(matches!(
            e.confirm_delivery(c, addr(3)),
            Err(EscrowError::Unauthorized(_))
        ));
        e.confirm_delivery(c, addr(2)).unwrap();
        assert!(matches!(
            e.confirm_delivery(c, addr(2)),
            Err(EscrowError::WrongState(ContractState::Inactive))
        ));
    }

    #[test]
    fn rejected_calls_mutate_nothing() {
        let mut e = env();
        let c = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        let before = e.fingerprint();
        let _ = e.consumer_pay(c, addr(1));
        let _ = e.consumer_pay(c, addr(9));
        let _ = e.confirm_delivery(c, addr(2));
        let _ = e.call(c, ContractFunction::ContractDeploy, addr(1));
        let _ = e.deploy_contract(addr(1), 7, item(2));
        assert_eq!(e.fingerprint(), before);
    }

    #[test]
    fn deploy_on_existing_contract_is_wrong_state() {
        let mut e = env();
        let c = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        for caller in [addr(1), addr(2), addr(9)] {
            assert!(matches!(
                e.call(c, ContractFunction::ContractDeploy, caller),
                Err(EscrowError::WrongState(ContractState::Created))
            ));
        }
        assert!(matches!(
            e.call(addr(0x77), ContractFunction::ConsumerPay, addr(2)),
            Err(EscrowError::UnknownContract(_))
        ));
    }

    #[test]
    fn gas_receipts_match_schedule_composition() {
        let mut e = env();
        let c = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        e.consumer_pay(c, addr(2)).unwrap();
        e.record_delivery(c, addr(2)).unwrap();
        e.confirm_delivery(c, addr(2)).unwrap();
        let ok_gas: Vec<(String, u64)> = e
            .receipts()
            .iter()
            .filter(|r| r.ok)
            .map(|r| (r.function.clone(), r.gas_used))
            .collect();
        // default schedule: deploy 800000+5·5000+9000+1125, pay 21000+3·5000+9000+2·1125,
        // settle 21000+3·5000+2·9000+2·1125 — delivery records no receipt.
        assert_eq!(
            ok_gas,
            vec![
                ("contractDeploy".to_string(), 835_125),
                ("consumerPay".to_string(), 47_250),
                ("paymentSettle".to_string(), 56_250),
            ]
        );
        assert!(e.receipts().iter().all(|r| r.blocks_waited == 1));
    }

    #[test]
    fn gas_limit_blocks_execution() {
        let mut e = env();
        e.gas_limit = 100_000; // below the deploy cost, above call base
        let err = e.deploy_contract(addr(1), 1000, item(1)).unwrap_err();
        assert!(matches!(err, EscrowError::GasLimitExceeded { needed: 835_125, .. }));
        assert_eq!(e.balance_of(&addr(1)), 10_000, "no funds moved");
        assert_eq!(e.contracts_in_order().count(), 0);
    }

    #[test]
    fn self_dealing_owner_with_consumer_role_still_blocked() {
        let mut e = env();
        e.registry.register(addr(1), Role::Consumer, b"pk1").unwrap();
        let c = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        assert!(matches!(
            e.consumer_pay(c, addr(1)),
            Err(EscrowError::SelfDealing)
        ));
    }

    #[test]
    fn registry_duplicate_and_key_rules() {
        let mut r = Registry::default();
        r.register(addr(1), Role::Owner, b"pk1").unwrap();
        assert!(matches!(
            r.register(addr(1), Role::Owner, b"pk1"),
            Err(EscrowError::DuplicateRegistration(_))
        ));
        // Same address may hold both roles under the same key…
        r.register(addr(1), Role::Consumer, b"pk1").unwrap();
        // …but never under a different key.
        assert!(matches!(
            r.register(addr(2), Role::Owner, b"pk2")
                .and_then(|_| r.register(addr(2), Role::Consumer, b"other")),
            Err(EscrowError::DuplicateRegistration(_))
        ));
        assert!(r.is_owner(&addr(1)) && r.is_consumer(&addr(1)));
        assert_eq!(r.public_key_of(&addr(1)), Some(&b"pk1"[..]));
    }

    #[test]
    fn relisting_gets_fresh_contract_address() {
        let mut e = env();
        let c1 = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        e.consumer_pay(c1, addr(2)).unwrap();
        e.confirm_delivery(c1, addr(2)).unwrap();
        let c2 = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        assert_ne!(c1, c2);
        assert_eq!(e.contract(&c2).unwrap().state, ContractState::Created);
        assert_eq!(
            e.contract(&c1).unwrap().state,
            ContractState::Inactive,
            "old listing stays closed"
        );
    }

    #[test]
    fn timeout_refund_extension() {
        let mut e = env();
        let c = e.deploy_contract(addr(1), 1000, item(1)).unwrap();
        e.consumer_pay(c, addr(2)).unwrap();

        // Disabled by default.
        assert!(matches!(
            e.timeout_refund(c, addr(1)),
            Err(EscrowError::TimeoutRefundDisabled)
        ));

        e.timeout_refund_after = Some(10);
        e.set_tick(5);
        assert!(matches!(
            e.timeout_refund(c, addr(1)),
            Err(EscrowError::TimeoutNotReached { .. })
        ));
        e.set_tick(10);
        assert!(matches!(
            e.timeout_refund(c, addr(2)),
            Err(EscrowError::Unauthorized(_))
        ));
        e.timeout_refund(c, addr(1)).unwrap();
        // Everyone made whole; nobody profited.
        assert_eq!(e.balance_of(&addr(1)), 10_000);
        assert_eq!(e.balance_of(&addr(2)), 10_000);
        assert_eq!(e.balance_of(&c), 0);
        assert_eq!(e.contract(&c).unwrap().state, ContractState::Inactive);
    }

    #[test]
    fn provenance_requires_registration() {
        let mut e = env();
        let record = e
            .commit_provenance(addr(2), "study-1", BTreeMap::new())
            .unwrap();
        assert_eq!(record.research_id, "study-1");
        assert_eq!(record.tx_id, None);
        assert!(matches!(
            e.commit_provenance(addr(9), "study-2", BTreeMap::new()),
            Err(EscrowError::Unauthorized(_))
        ));
        let last_ok = e.receipts().iter().rev().find(|r| r.ok).unwrap();
        assert_eq!(last_ok.function, "provenanceCommit");
        assert_eq!(last_ok.gas_used, 21_000 + 5_000 + 1_125);
    }
}
