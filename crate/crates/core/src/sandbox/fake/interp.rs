//! Tree-walking evaluator for the fake worker. Time is simulated: every
//! statement costs a fixed tick and `time.sleep` advances the clock, so
//! timeouts are deterministic.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use super::lexer::tokenize;
use super::parser::{parse, BinOp, CmpOp, Expr, FPart, FuncDef, Stmt, StmtKind};

const STEP_COST: f64 = 2e-6;
const MAX_DEPTH: usize = 200;
const MAX_SEQ: i64 = 10_000_000;
const STDOUT_CAP: usize = 1 << 20;
/// Epoch offset reported by `time.time()`.
const EPOCH: f64 = 1_700_000_000.0;

#[derive(Debug, Clone)]
pub struct FileObj {
    pub path: String,
    pub writable: bool,
    pub content: String,
}

#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
    Dict(Vec<(Value, Value)>),
    Func(Arc<FuncDef>),
    Builtin(String),
    Module(String),
    File(FileObj),
    Exc(String, String),
    Method(Box<Value>, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostError {
    pub kind: &'static str,
    pub msg: String,
}

/// Filesystem view of the worker. Paths are container paths; relative paths
/// resolve against the workspace.
pub trait Host {
    fn read(&mut self, path: &str) -> Result<Vec<u8>, HostError>;
    fn write(&mut self, path: &str, data: &[u8], append: bool) -> Result<(), HostError>;
    fn list_dir(&mut self, path: &str) -> Result<Vec<String>, HostError>;
    fn exists(&mut self, path: &str) -> bool;
    fn cwd(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Error,
    Timeout,
    Exited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub stdout: String,
    pub stderr: String,
    pub value_repr: Option<String>,
    pub elapsed: f64,
}

/// Persistent interpreter state: module-level bindings and the clock.
#[derive(Debug, Default)]
pub struct Interp {
    globals: BTreeMap<String, Value>,
    clock: f64,
}

enum Exc {
    Py(String, String),
    Exit,
    Timeout,
}

type R<T> = Result<T, Exc>;

enum Flow {
    Next,
    Return(Value),
    Break,
    Continue,
}

fn err<T>(kind: &str, msg: impl Into<String>) -> R<T> {
    Err(Exc::Py(kind.to_string(), msg.into()))
}

fn host_err(e: HostError) -> Exc {
    Exc::Py(e.kind.to_string(), e.msg)
}

impl Interp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.globals.clear();
    }

    pub fn has_binding(&self, name: &str) -> bool {
        self.globals.contains_key(name)
    }

    /// Runs `src` against the persistent globals. A syntax error runs nothing.
    pub fn run(&mut self, src: &str, timeout: f64, host: &mut dyn Host) -> RunOutcome {
        let program = match tokenize(src).and_then(parse) {
            Ok(p) => p,
            Err(e) => {
                return RunOutcome {
                    status: RunStatus::Error,
                    stdout: String::new(),
                    stderr: format!(
                        "  File \"<cell>\", line {}\n{}: {}\n",
                        e.line, e.kind, e.msg
                    ),
                    value_repr: None,
                    elapsed: 0.0,
                }
            }
        };
        let start = self.clock;
        let mut m = Machine {
            globals: &mut self.globals,
            frames: Vec::new(),
            host,
            stdout: String::new(),
            stderr: String::new(),
            clock: start,
            deadline: start + timeout,
            line: 0,
        };
        let mut last = None;
        let mut outcome = Ok(());
        for (i, stmt) in program.iter().enumerate() {
            let is_last = i + 1 == program.len();
            if let (true, StmtKind::Expr(e)) = (is_last, &stmt.kind) {
                m.line = stmt.line;
                match m.tick().and_then(|_| m.eval(e)) {
                    Ok(v) => last = Some(v),
                    Err(e) => outcome = Err(e),
                }
                break;
            }
            match m.exec(stmt) {
                Ok(Flow::Next) => {}
                Ok(_) => {
                    outcome = err(
                        "SyntaxError",
                        "'return', 'break' or 'continue' outside function or loop",
                    );
                    break;
                }
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        let line = m.line;
        let mut stdout = std::mem::take(&mut m.stdout);
        let mut stderr = std::mem::take(&mut m.stderr);
        let clock = m.clock;
        drop(m);
        let (status, elapsed) = match outcome {
            Ok(()) => (RunStatus::Ok, clock - start),
            Err(Exc::Timeout) => {
                stderr.push_str("KeyboardInterrupt: execution exceeded the time limit\n");
                (RunStatus::Timeout, timeout)
            }
            Err(Exc::Exit) => (RunStatus::Exited, clock - start),
            Err(Exc::Py(kind, msg)) => {
                let _ = write!(
                    stderr,
                    "Traceback (most recent call last):\n  File \"<cell>\", line {line}, in <module>\n{}\n",
                    if msg.is_empty() { kind } else { format!("{kind}: {msg}") }
                );
                (RunStatus::Error, clock - start)
            }
        };
        self.clock = start + elapsed;
        if stdout.len() > STDOUT_CAP {
            let mut cut = STDOUT_CAP;
            while !stdout.is_char_boundary(cut) {
                cut -= 1;
            }
            stdout.truncate(cut);
        }
        let value_repr = match (status, last) {
            (RunStatus::Ok, Some(v)) if !matches!(v, Value::None) => Some(repr(&v)),
            _ => None,
        };
        RunOutcome {
            status,
            stdout,
            stderr,
            value_repr,
            elapsed,
        }
    }
}

struct Machine<'a> {
    globals: &'a mut BTreeMap<String, Value>,
    frames: Vec<BTreeMap<String, Value>>,
    host: &'a mut dyn Host,
    stdout: String,
    stderr: String,
    clock: f64,
    deadline: f64,
    line: usize,
}

const BUILTINS: &[&str] = &[
    "print",
    "len",
    "str",
    "int",
    "float",
    "round",
    "sum",
    "min",
    "max",
    "abs",
    "sorted",
    "range",
    "open",
    "exit",
    "quit",
    "bool",
    "list",
    "dict",
    "enumerate",
    "zip",
    "repr",
    "isinstance",
    "ValueError",
    "TypeError",
    "RuntimeError",
    "KeyError",
    "IndexError",
    "Exception",
    "ZeroDivisionError",
    "FileNotFoundError",
    "AssertionError",
    "NotImplementedError",
];

const MODULES: &[&str] = &["time", "os", "os.path", "sys", "math"];

const MODULE_FUNCS: &[&str] = &[
    "time.sleep",
    "time.time",
    "os._exit",
    "os.listdir",
    "os.getcwd",
    "os.path.exists",
    "os.path.join",
    "os.path.basename",
    "sys.exit",
    "math.sqrt",
    "math.log",
    "math.exp",
    "math.floor",
    "math.ceil",
    "math.isclose",
];

fn is_exception_name(n: &str) -> bool {
    n.ends_with("Error") || n == "Exception"
}

impl Machine<'_> {
    fn tick(&mut self) -> R<()> {
        self.clock += STEP_COST;
        if self.clock > self.deadline {
            return Err(Exc::Timeout);
        }
        Ok(())
    }

    fn lookup(&self, name: &str) -> R<Value> {
        if let Some(v) = self.frames.last().and_then(|f| f.get(name)) {
            return Ok(v.clone());
        }
        if let Some(v) = self.globals.get(name) {
            return Ok(v.clone());
        }
        if BUILTINS.contains(&name) {
            return Ok(Value::Builtin(name.to_string()));
        }
        err("NameError", format!("name '{name}' is not defined"))
    }

    fn assign(&mut self, name: &str, v: Value) {
        match self.frames.last_mut() {
            Some(f) => f.insert(name.to_string(), v),
            None => self.globals.insert(name.to_string(), v),
        };
    }

    fn exec_block(&mut self, body: &[Stmt]) -> R<Flow> {
        for s in body {
            match self.exec(s)? {
                Flow::Next => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Next)
    }

    fn exec(&mut self, stmt: &Stmt) -> R<Flow> {
        self.line = stmt.line;
        self.tick()?;
        match &stmt.kind {
            StmtKind::Expr(e) => {
                self.eval(e)?;
            }
            StmtKind::Assign(names, e) => {
                let v = self.eval(e)?;
                for n in names {
                    self.assign(n, v.clone());
                }
            }
            StmtKind::IndexAssign(obj, idx, e) => {
                let Expr::Name(name) = obj else {
                    return err("NotImplementedError", "nested item assignment");
                };
                let v = self.eval(e)?;
                let key = self.eval(idx)?;
                let mut container = self.lookup(name)?;
                match &mut container {
                    Value::List(items) => {
                        let i = seq_index(&key, items.len())?;
                        items[i] = v;
                    }
                    Value::Dict(pairs) => match pairs.iter_mut().find(|(k, _)| py_eq(k, &key)) {
                        Some(slot) => slot.1 = v,
                        None => pairs.push((key, v)),
                    },
                    other => {
                        return err(
                            "TypeError",
                            format!(
                                "'{}' object does not support item assignment",
                                type_name(other)
                            ),
                        )
                    }
                }
                self.assign(name, container);
            }
            StmtKind::AugAssign(name, op, e) => {
                let cur = self.lookup(name)?;
                let rhs = self.eval(e)?;
                let v = binop(*op, cur, rhs)?;
                self.assign(name, v);
            }
            StmtKind::Def(def) => self.assign(&def.name, Value::Func(def.clone())),
            StmtKind::Return(e) => {
                if self.frames.is_empty() {
                    return err("SyntaxError", "'return' outside function");
                }
                let v = match e {
                    Some(e) => self.eval(e)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::If(branches, otherwise) => {
                for (cond, body) in branches {
                    if truthy(&self.eval(cond)?) {
                        return self.exec_block(body);
                    }
                }
                if let Some(body) = otherwise {
                    return self.exec_block(body);
                }
            }
            StmtKind::For(vars, iter, body) => {
                let v = self.eval(iter)?;
                let items = self.iterate(v)?;
                for item in items {
                    self.tick()?;
                    if let [v] = vars.as_slice() {
                        self.assign(v, item);
                    } else {
                        let parts = self.iterate(item)?;
                        if parts.len() != vars.len() {
                            return err(
                                "ValueError",
                                format!(
                                    "expected {} values to unpack, got {}",
                                    vars.len(),
                                    parts.len()
                                ),
                            );
                        }
                        for (n, p) in vars.iter().zip(parts) {
                            self.assign(n, p);
                        }
                    }
                    match self.exec_block(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Next | Flow::Continue => {}
                    }
                }
            }
            StmtKind::While(cond, body) => {
                while truthy(&self.eval(cond)?) {
                    self.tick()?;
                    match self.exec_block(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Next | Flow::Continue => {}
                    }
                }
            }
            StmtKind::With(ctx, alias, body) => {
                let v = self.eval(ctx)?;
                if let Some(a) = alias {
                    self.assign(a, v);
                }
                return self.exec_block(body);
            }
            StmtKind::Import(mods) => {
                for (module, alias) in mods {
                    if let Some((base, name)) = module.rsplit_once('.') {
                        if MODULES.contains(&base) && !MODULES.contains(&module.as_str()) {
                            let v = self.attr(Value::Module(base.to_string()), name)?;
                            self.assign(alias, v);
                            continue;
                        }
                    }
                    let top = module.split('.').next().unwrap_or_default();
                    if !MODULES.contains(&module.as_str()) {
                        return err("ModuleNotFoundError", format!("No module named '{top}'"));
                    }
                    let bound = if alias == top { top } else { module.as_str() };
                    self.assign(alias, Value::Module(bound.to_string()));
                }
            }
            StmtKind::Raise(e) => {
                let v = match e {
                    Some(e) => self.eval(e)?,
                    None => return err("RuntimeError", "No active exception to reraise"),
                };
                return match v {
                    Value::Exc(k, m) => Err(Exc::Py(k, m)),
                    Value::Builtin(n) if is_exception_name(&n) => Err(Exc::Py(n, String::new())),
                    _ => err("TypeError", "exceptions must derive from BaseException"),
                };
            }
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Pass => {}
        }
        Ok(Flow::Next)
    }

    fn eval(&mut self, e: &Expr) -> R<Value> {
        Ok(match e {
            Expr::None => Value::None,
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Int(i) => Value::Int(*i),
            Expr::Float(f) => Value::Float(*f),
            Expr::Str(s) => Value::Str(s.clone()),
            Expr::FStr(parts) => {
                let mut out = String::new();
                for p in parts {
                    match p {
                        FPart::Text(t) => out.push_str(t),
                        FPart::Expr(e, spec) => {
                            let v = self.eval(e)?;
                            out.push_str(&format_spec(&v, spec.as_deref().unwrap_or(""))?);
                        }
                    }
                }
                Value::Str(out)
            }
            Expr::Name(n) => self.lookup(n)?,
            Expr::List(items) => Value::List(items.iter().map(|i| self.eval(i)).collect::<R<_>>()?),
            Expr::Dict(items) => {
                let mut pairs: Vec<(Value, Value)> = Vec::new();
                for (k, v) in items {
                    let k = self.eval(k)?;
                    let v = self.eval(v)?;
                    match pairs.iter_mut().find(|(x, _)| py_eq(x, &k)) {
                        Some(slot) => slot.1 = v,
                        None => pairs.push((k, v)),
                    }
                }
                Value::Dict(pairs)
            }
            Expr::Neg(x) => match self.eval(x)? {
                Value::Int(i) => Value::Int(i.checked_neg().ok_or_else(overflow)?),
                Value::Bool(b) => Value::Int(-(b as i64)),
                Value::Float(f) => Value::Float(-f),
                other => {
                    return err(
                        "TypeError",
                        format!("bad operand type for unary -: '{}'", type_name(&other)),
                    )
                }
            },
            Expr::Not(x) => Value::Bool(!truthy(&self.eval(x)?)),
            Expr::And(a, b) => {
                let l = self.eval(a)?;
                if !truthy(&l) {
                    l
                } else {
                    self.eval(b)?
                }
            }
            Expr::Or(a, b) => {
                let l = self.eval(a)?;
                if truthy(&l) {
                    l
                } else {
                    self.eval(b)?
                }
            }
            Expr::Bin(a, op, b) => {
                let l = self.eval(a)?;
                let r = self.eval(b)?;
                binop(*op, l, r)?
            }
            Expr::Cmp(a, op, b) => {
                let l = self.eval(a)?;
                let r = self.eval(b)?;
                Value::Bool(compare(*op, &l, &r)?)
            }
            Expr::Attr(obj, name) => {
                let v = self.eval(obj)?;
                self.attr(v, name)?
            }
            Expr::Index(obj, idx) => {
                let v = self.eval(obj)?;
                let i = self.eval(idx)?;
                index(&v, &i)?
            }
            Expr::Slice(obj, lo, hi) => {
                let v = self.eval(obj)?;
                let lo = match lo {
                    Some(e) => Some(as_int(&self.eval(e)?)?),
                    None => None,
                };
                let hi = match hi {
                    Some(e) => Some(as_int(&self.eval(e)?)?),
                    None => None,
                };
                slice(&v, lo, hi)?
            }
            Expr::Call { func, args, kwargs } => {
                let argv = args.iter().map(|a| self.eval(a)).collect::<R<Vec<_>>>()?;
                let kw = kwargs
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), self.eval(v)?)))
                    .collect::<R<Vec<_>>>()?;
                // Mutating methods on a named receiver write the result back.
                if let Expr::Attr(recv, method) = &**func {
                    if let Expr::Name(var) = &**recv {
                        let target = self.lookup(var)?;
                        if matches!(target, Value::List(_) | Value::Dict(_)) {
                            let (updated, out) = self.method(target, method, argv, kw)?;
                            if let Some(u) = updated {
                                self.assign(var, u);
                            }
                            return Ok(out);
                        }
                    }
                }
                let f = self.eval(func)?;
                self.call(f, argv, kw)?
            }
        })
    }

    fn attr(&mut self, v: Value, name: &str) -> R<Value> {
        match &v {
            Value::Module(m) => {
                let full = format!("{m}.{name}");
                match full.as_str() {
                    "math.pi" => Ok(Value::Float(std::f64::consts::PI)),
                    "math.e" => Ok(Value::Float(std::f64::consts::E)),
                    "math.inf" => Ok(Value::Float(f64::INFINITY)),
                    "sys.stdout" | "sys.stderr" => Ok(Value::Module(full)),
                    f if MODULES.contains(&f) => Ok(Value::Module(full)),
                    f if MODULE_FUNCS.contains(&f) => Ok(Value::Builtin(full)),
                    _ => err(
                        "AttributeError",
                        format!("module '{m}' has no attribute '{name}'"),
                    ),
                }
            }
            Value::Str(_) | Value::List(_) | Value::Dict(_) | Value::File(_) => {
                Ok(Value::Method(Box::new(v), name.to_string()))
            }
            _ => err(
                "AttributeError",
                format!("'{}' object has no attribute '{name}'", type_name(&v)),
            ),
        }
    }

    fn iterate(&mut self, v: Value) -> R<Vec<Value>> {
        match v {
            Value::List(items) => Ok(items),
            Value::Str(s) => Ok(s.chars().map(|c| Value::Str(c.to_string())).collect()),
            Value::Dict(pairs) => Ok(pairs.into_iter().map(|(k, _)| k).collect()),
            Value::File(f) => Ok(f
                .content
                .split_inclusive('\n')
                .map(|l| Value::Str(l.to_string()))
                .collect()),
            other => err(
                "TypeError",
                format!("'{}' object is not iterable", type_name(&other)),
            ),
        }
    }

    fn call(&mut self, f: Value, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        match f {
            Value::Func(def) => self.call_function(&def, args, kwargs),
            Value::Builtin(name) => self.builtin(&name, args, kwargs),
            Value::Method(recv, name) => Ok(self.method(*recv, &name, args, kwargs)?.1),
            other => err(
                "TypeError",
                format!("'{}' object is not callable", type_name(&other)),
            ),
        }
    }

    fn call_function(
        &mut self,
        def: &FuncDef,
        args: Vec<Value>,
        kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        if self.frames.len() >= MAX_DEPTH {
            return err("RecursionError", "maximum recursion depth exceeded");
        }
        if args.len() > def.params.len() {
            return err(
                "TypeError",
                format!(
                    "{}() takes {} positional arguments but {} were given",
                    def.name,
                    def.params.len(),
                    args.len()
                ),
            );
        }
        let mut frame = BTreeMap::new();
        let mut args = args.into_iter();
        for (p, default) in &def.params {
            let v = if let Some(a) = args.next() {
                a
            } else if let Some((_, v)) = kwargs.iter().find(|(k, _)| k == p) {
                v.clone()
            } else if let Some(d) = default {
                self.eval(d)?
            } else {
                return err(
                    "TypeError",
                    format!("{}() missing required positional argument: '{p}'", def.name),
                );
            };
            frame.insert(p.clone(), v);
        }
        if let Some((k, _)) = kwargs
            .iter()
            .find(|(k, _)| !def.params.iter().any(|(p, _)| p == k))
        {
            return err(
                "TypeError",
                format!("{}() got an unexpected keyword argument '{k}'", def.name),
            );
        }
        self.frames.push(frame);
        let line = self.line;
        let res = self.exec_block(&def.body);
        self.frames.pop();
        match res? {
            Flow::Return(v) => {
                self.line = line;
                Ok(v)
            }
            _ => {
                self.line = line;
                Ok(Value::None)
            }
        }
    }

    fn builtin(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let kw = |k: &str| kwargs.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone());
        let arg = |i: usize| -> R<&Value> {
            args.get(i)
                .ok_or_else(|| Exc::Py("TypeError".into(), format!("{name}() missing argument")))
        };
        if is_exception_name(name) {
            let msg = args.first().map(to_str).unwrap_or_default();
            return Ok(Value::Exc(name.to_string(), msg));
        }
        Ok(match name {
            "print" => {
                let sep = kw("sep").map(|v| to_str(&v)).unwrap_or_else(|| " ".into());
                let end = kw("end").map(|v| to_str(&v)).unwrap_or_else(|| "\n".into());
                let text: Vec<String> = args.iter().map(to_str).collect();
                let line = format!("{}{}", text.join(&sep), end);
                match kw("file") {
                    Some(Value::Module(m)) if m == "sys.stderr" => self.stderr.push_str(&line),
                    _ => {
                        if self.stdout.len() <= STDOUT_CAP {
                            self.stdout.push_str(&line)
                        }
                    }
                }
                Value::None
            }
            "len" => Value::Int(match arg(0)? {
                Value::Str(s) => s.chars().count() as i64,
                Value::List(l) => l.len() as i64,
                Value::Dict(d) => d.len() as i64,
                other => {
                    return err(
                        "TypeError",
                        format!("object of type '{}' has no len()", type_name(other)),
                    )
                }
            }),
            "str" => Value::Str(args.first().map(to_str).unwrap_or_default()),
            "repr" => Value::Str(repr(arg(0)?)),
            "bool" => Value::Bool(args.first().map(truthy).unwrap_or(false)),
            "int" => match args.first() {
                None => Value::Int(0),
                Some(Value::Int(i)) => Value::Int(*i),
                Some(Value::Bool(b)) => Value::Int(*b as i64),
                Some(Value::Float(f)) => {
                    if !f.is_finite() {
                        return err(
                            "ValueError",
                            "cannot convert float NaN or infinity to integer",
                        );
                    }
                    Value::Int(f.trunc() as i64)
                }
                Some(Value::Str(s)) => match s.trim().replace('_', "").parse::<i64>() {
                    Ok(i) => Value::Int(i),
                    Err(_) => {
                        return err(
                            "ValueError",
                            format!(
                                "invalid literal for int() with base 10: {}",
                                repr(&Value::Str(s.clone()))
                            ),
                        )
                    }
                },
                Some(other) => {
                    return err(
                        "TypeError",
                        format!(
                            "int() argument must be a string or a number, not '{}'",
                            type_name(other)
                        ),
                    )
                }
            },
            "float" => match args.first() {
                None => Value::Float(0.0),
                Some(Value::Str(s)) => {
                    let t = s.trim().to_ascii_lowercase();
                    let parsed = match t.as_str() {
                        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
                        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
                        "nan" => Some(f64::NAN),
                        _ if t.chars().any(|c| c.is_ascii_alphabetic() && c != 'e') => None,
                        _ => t.parse::<f64>().ok(),
                    };
                    match parsed {
                        Some(f) => Value::Float(f),
                        None => {
                            return err(
                                "ValueError",
                                format!(
                                    "could not convert string to float: {}",
                                    repr(&Value::Str(s.clone()))
                                ),
                            )
                        }
                    }
                }
                Some(v) => Value::Float(as_float(v)?),
            },
            "abs" => match arg(0)? {
                Value::Int(i) => Value::Int(i.checked_abs().ok_or_else(overflow)?),
                v => Value::Float(as_float(v)?.abs()),
            },
            "round" => {
                let x = arg(0)?;
                match args.get(1).or(kw("ndigits").as_ref()).cloned() {
                    None | Some(Value::None) => match x {
                        Value::Int(i) => Value::Int(*i),
                        v => {
                            let f = as_float(v)?;
                            if !f.is_finite() {
                                return err(
                                    "OverflowError",
                                    "cannot convert float infinity to integer",
                                );
                            }
                            Value::Int(f.round_ties_even() as i64)
                        }
                    },
                    Some(n) => {
                        let n = as_int(&n)?;
                        match x {
                            Value::Int(i) if n >= 0 => Value::Int(*i),
                            v => Value::Float(round_to(as_float(v)?, n)),
                        }
                    }
                }
            }
            "sum" => {
                let items = self.iterate(arg(0)?.clone())?;
                let mut acc = args.get(1).cloned().unwrap_or(Value::Int(0));
                for i in items {
                    acc = binop(BinOp::Add, acc, i)?;
                }
                acc
            }
            "min" | "max" => {
                let items = if args.len() == 1 {
                    self.iterate(args[0].clone())?
                } else {
                    args.clone()
                };
                if items.is_empty() {
                    return err("ValueError", format!("{name}() arg is an empty sequence"));
                }
                let mut best = items[0].clone();
                for i in items.into_iter().skip(1) {
                    let ord = py_cmp(&i, &best)?;
                    if (name == "min" && ord == Ordering::Less)
                        || (name == "max" && ord == Ordering::Greater)
                    {
                        best = i;
                    }
                }
                best
            }
            "sorted" => {
                let items = self.iterate(arg(0)?.clone())?;
                let key = kw("key");
                let mut keyed = Vec::with_capacity(items.len());
                for i in items {
                    let k = match &key {
                        Some(f) if !matches!(f, Value::None) => {
                            self.call(f.clone(), vec![i.clone()], vec![])?
                        }
                        _ => i.clone(),
                    };
                    keyed.push((k, i));
                }
                let mut failure = None;
                keyed.sort_by(|a, b| {
                    py_cmp(&a.0, &b.0).unwrap_or_else(|e| {
                        failure.get_or_insert(e);
                        Ordering::Equal
                    })
                });
                if let Some(e) = failure {
                    return Err(e);
                }
                if kw("reverse").is_some_and(|v| truthy(&v)) {
                    keyed.reverse();
                }
                Value::List(keyed.into_iter().map(|(_, v)| v).collect())
            }
            "range" => {
                let ints = args.iter().map(as_int).collect::<R<Vec<_>>>()?;
                let (start, stop, step) = match ints.as_slice() {
                    [stop] => (0, *stop, 1),
                    [start, stop] => (*start, *stop, 1),
                    [start, stop, step] => (*start, *stop, *step),
                    _ => return err("TypeError", "range expected 1 to 3 arguments"),
                };
                if step == 0 {
                    return err("ValueError", "range() arg 3 must not be zero");
                }
                let count = if step > 0 {
                    (stop - start + step - 1).max(0) / step
                } else {
                    (start - stop - step - 1).max(0) / -step
                };
                if count > MAX_SEQ {
                    return err("MemoryError", "range too large for this worker");
                }
                Value::List((0..count).map(|i| Value::Int(start + i * step)).collect())
            }
            "list" => match args.first() {
                None => Value::List(vec![]),
                Some(v) => Value::List(self.iterate(v.clone())?),
            },
            "dict" => Value::Dict(vec![]),
            "enumerate" => {
                let start = match args.get(1).cloned().or(kw("start")) {
                    Some(v) => as_int(&v)?,
                    None => 0,
                };
                let items = self.iterate(arg(0)?.clone())?;
                Value::List(
                    items
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| Value::List(vec![Value::Int(start + i as i64), v]))
                        .collect(),
                )
            }
            "zip" => {
                let lists = args
                    .iter()
                    .map(|a| self.iterate(a.clone()))
                    .collect::<R<Vec<_>>>()?;
                let n = lists.iter().map(Vec::len).min().unwrap_or(0);
                Value::List(
                    (0..n)
                        .map(|i| Value::List(lists.iter().map(|l| l[i].clone()).collect()))
                        .collect(),
                )
            }
            "isinstance" => {
                let v = arg(0)?;
                let t = match arg(1)? {
                    Value::Builtin(t) => t.clone(),
                    _ => return err("TypeError", "isinstance() arg 2 must be a type"),
                };
                Value::Bool(type_name(v) == t)
            }
            "open" => {
                let path = match arg(0)? {
                    Value::Str(s) => s.clone(),
                    other => {
                        return err(
                            "TypeError",
                            format!("expected str, not {}", type_name(other)),
                        )
                    }
                };
                let mode = match args.get(1).cloned().or(kw("mode")) {
                    Some(Value::Str(m)) => m,
                    _ => "r".to_string(),
                };
                if mode.contains('w') || mode.contains('a') || mode.contains('x') {
                    self.host
                        .write(&path, b"", mode.contains('a'))
                        .map_err(host_err)?;
                    Value::File(FileObj {
                        path,
                        writable: true,
                        content: String::new(),
                    })
                } else {
                    let bytes = self.host.read(&path).map_err(host_err)?;
                    Value::File(FileObj {
                        path,
                        writable: false,
                        content: String::from_utf8_lossy(&bytes).into_owned(),
                    })
                }
            }
            "exit" | "quit" | "sys.exit" | "os._exit" => return Err(Exc::Exit),
            "time.sleep" => {
                let secs = as_float(arg(0)?)?;
                if secs < 0.0 {
                    return err("ValueError", "sleep length must be non-negative");
                }
                self.clock += secs;
                if self.clock > self.deadline {
                    return Err(Exc::Timeout);
                }
                Value::None
            }
            "time.time" => Value::Float(EPOCH + self.clock),
            "os.getcwd" => Value::Str(self.host.cwd()),
            "os.listdir" => {
                let path = match args.first() {
                    Some(v) => to_str(v),
                    None => ".".into(),
                };
                let mut names = self.host.list_dir(&path).map_err(host_err)?;
                names.sort();
                Value::List(names.into_iter().map(Value::Str).collect())
            }
            "os.path.exists" => Value::Bool(self.host.exists(&to_str(arg(0)?))),
            "os.path.join" => {
                let mut out = String::new();
                for a in &args {
                    let s = to_str(a);
                    if s.starts_with('/') {
                        out = s;
                    } else {
                        if !out.is_empty() && !out.ends_with('/') {
                            out.push('/');
                        }
                        out.push_str(&s);
                    }
                }
                Value::Str(out)
            }
            "os.path.basename" => Value::Str(
                to_str(arg(0)?)
                    .rsplit('/')
                    .next()
                    .unwrap_or_default()
                    .to_string(),
            ),
            "math.sqrt" => {
                let x = as_float(arg(0)?)?;
                if x < 0.0 {
                    return err("ValueError", "math domain error");
                }
                Value::Float(x.sqrt())
            }
            "math.log" => {
                let x = as_float(arg(0)?)?;
                if x <= 0.0 {
                    return err("ValueError", "math domain error");
                }
                match args.get(1) {
                    Some(b) => Value::Float(x.ln() / as_float(b)?.ln()),
                    None => Value::Float(x.ln()),
                }
            }
            "math.exp" => Value::Float(as_float(arg(0)?)?.exp()),
            "math.floor" => Value::Int(as_float(arg(0)?)?.floor() as i64),
            "math.ceil" => Value::Int(as_float(arg(0)?)?.ceil() as i64),
            "math.isclose" => {
                let a = as_float(arg(0)?)?;
                let b = as_float(arg(1)?)?;
                let rel = kw("rel_tol")
                    .map(|v| as_float(&v))
                    .transpose()?
                    .unwrap_or(1e-9);
                let abs = kw("abs_tol")
                    .map(|v| as_float(&v))
                    .transpose()?
                    .unwrap_or(0.0);
                Value::Bool((a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs))
            }
            other => return err("NameError", format!("name '{other}' is not defined")),
        })
    }

    /// Returns the possibly-updated receiver and the call result.
    fn method(
        &mut self,
        recv: Value,
        name: &str,
        args: Vec<Value>,
        _kwargs: Vec<(String, Value)>,
    ) -> R<(Option<Value>, Value)> {
        let no_attr = |v: &Value| {
            err(
                "AttributeError",
                format!("'{}' object has no attribute '{name}'", type_name(v)),
            )
        };
        let str_arg = |i: usize| -> R<String> {
            match args.get(i) {
                Some(Value::Str(s)) => Ok(s.clone()),
                Some(other) => err(
                    "TypeError",
                    format!("must be str, not {}", type_name(other)),
                ),
                None => err("TypeError", format!("{name}() missing argument")),
            }
        };
        match recv {
            Value::Str(ref s) => {
                let out = match name {
                    "strip" | "lstrip" | "rstrip" => {
                        let set: Vec<char> = match args.first() {
                            Some(Value::Str(c)) => c.chars().collect(),
                            _ => vec![],
                        };
                        let pred = |c: char| {
                            if set.is_empty() {
                                c.is_whitespace()
                            } else {
                                set.contains(&c)
                            }
                        };
                        Value::Str(
                            match name {
                                "strip" => s.trim_matches(pred),
                                "lstrip" => s.trim_start_matches(pred),
                                _ => s.trim_end_matches(pred),
                            }
                            .to_string(),
                        )
                    }
                    "lower" => Value::Str(s.to_lowercase()),
                    "upper" => Value::Str(s.to_uppercase()),
                    "split" => {
                        let parts: Vec<Value> = match args.first() {
                            None | Some(Value::None) => {
                                s.split_whitespace().map(|p| Value::Str(p.into())).collect()
                            }
                            Some(_) => {
                                let sep = str_arg(0)?;
                                if sep.is_empty() {
                                    return err("ValueError", "empty separator");
                                }
                                match args.get(1) {
                                    Some(n) => s
                                        .splitn(as_int(n)?.max(0) as usize + 1, sep.as_str())
                                        .map(|p| Value::Str(p.into()))
                                        .collect(),
                                    None => s
                                        .split(sep.as_str())
                                        .map(|p| Value::Str(p.into()))
                                        .collect(),
                                }
                            }
                        };
                        Value::List(parts)
                    }
                    "splitlines" => Value::List(s.lines().map(|l| Value::Str(l.into())).collect()),
                    "replace" => Value::Str(s.replace(&str_arg(0)?, &str_arg(1)?)),
                    "startswith" => Value::Bool(s.starts_with(&str_arg(0)?)),
                    "endswith" => Value::Bool(s.ends_with(&str_arg(0)?)),
                    "find" => {
                        let needle = str_arg(0)?;
                        Value::Int(match s.find(&needle) {
                            Some(b) => s[..b].chars().count() as i64,
                            None => -1,
                        })
                    }
                    "count" => {
                        let needle = str_arg(0)?;
                        Value::Int(if needle.is_empty() {
                            s.chars().count() as i64 + 1
                        } else {
                            s.matches(&needle).count() as i64
                        })
                    }
                    "isdigit" => {
                        Value::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit()))
                    }
                    "join" => {
                        let items =
                            self.iterate(args.first().cloned().unwrap_or(Value::List(vec![])))?;
                        let mut parts = Vec::with_capacity(items.len());
                        for i in items {
                            match i {
                                Value::Str(p) => parts.push(p),
                                other => {
                                    return err(
                                        "TypeError",
                                        format!(
                                            "sequence item: expected str instance, {} found",
                                            type_name(&other)
                                        ),
                                    )
                                }
                            }
                        }
                        Value::Str(parts.join(s))
                    }
                    _ => return no_attr(&recv),
                };
                Ok((None, out))
            }
            Value::List(mut items) => match name {
                "append" => {
                    items.push(args.into_iter().next().unwrap_or(Value::None));
                    Ok((Some(Value::List(items)), Value::None))
                }
                "extend" => {
                    let more =
                        self.iterate(args.into_iter().next().unwrap_or(Value::List(vec![])))?;
                    items.extend(more);
                    Ok((Some(Value::List(items)), Value::None))
                }
                "pop" => {
                    if items.is_empty() {
                        return err("IndexError", "pop from empty list");
                    }
                    let i = match args.first() {
                        Some(v) => seq_index(v, items.len())?,
                        None => items.len() - 1,
                    };
                    let v = items.remove(i);
                    Ok((Some(Value::List(items)), v))
                }
                "insert" => {
                    let i = as_int(args.first().unwrap_or(&Value::Int(0)))?;
                    let n = items.len() as i64;
                    let pos = if i < 0 { (n + i).max(0) } else { i.min(n) } as usize;
                    items.insert(pos, args.get(1).cloned().unwrap_or(Value::None));
                    Ok((Some(Value::List(items)), Value::None))
                }
                "sort" => {
                    let mut failure = None;
                    items.sort_by(|a, b| {
                        py_cmp(a, b).unwrap_or_else(|e| {
                            failure.get_or_insert(e);
                            Ordering::Equal
                        })
                    });
                    if let Some(e) = failure {
                        return Err(e);
                    }
                    Ok((Some(Value::List(items)), Value::None))
                }
                "index" => {
                    let target = args.first().cloned().unwrap_or(Value::None);
                    match items.iter().position(|v| py_eq(v, &target)) {
                        Some(i) => Ok((None, Value::Int(i as i64))),
                        None => err("ValueError", format!("{} is not in list", repr(&target))),
                    }
                }
                "count" => {
                    let target = args.first().cloned().unwrap_or(Value::None);
                    Ok((
                        None,
                        Value::Int(items.iter().filter(|v| py_eq(v, &target)).count() as i64),
                    ))
                }
                "copy" => Ok((None, Value::List(items))),
                _ => no_attr(&Value::List(items)),
            },
            Value::Dict(mut pairs) => match name {
                "get" => {
                    let key = args.first().cloned().unwrap_or(Value::None);
                    let default = args.get(1).cloned().unwrap_or(Value::None);
                    Ok((
                        None,
                        pairs
                            .iter()
                            .find(|(k, _)| py_eq(k, &key))
                            .map(|(_, v)| v.clone())
                            .unwrap_or(default),
                    ))
                }
                "keys" => Ok((
                    None,
                    Value::List(pairs.into_iter().map(|(k, _)| k).collect()),
                )),
                "values" => Ok((
                    None,
                    Value::List(pairs.into_iter().map(|(_, v)| v).collect()),
                )),
                "items" => Ok((
                    None,
                    Value::List(
                        pairs
                            .into_iter()
                            .map(|(k, v)| Value::List(vec![k, v]))
                            .collect(),
                    ),
                )),
                "pop" => {
                    let key = args.first().cloned().unwrap_or(Value::None);
                    match pairs.iter().position(|(k, _)| py_eq(k, &key)) {
                        Some(i) => {
                            let (_, v) = pairs.remove(i);
                            Ok((Some(Value::Dict(pairs)), v))
                        }
                        None => match args.get(1) {
                            Some(d) => Ok((None, d.clone())),
                            None => err("KeyError", repr(&key)),
                        },
                    }
                }
                "update" => {
                    if let Some(Value::Dict(more)) = args.first() {
                        for (k, v) in more.iter().cloned() {
                            match pairs.iter_mut().find(|(x, _)| py_eq(x, &k)) {
                                Some(slot) => slot.1 = v,
                                None => pairs.push((k, v)),
                            }
                        }
                    }
                    Ok((Some(Value::Dict(pairs)), Value::None))
                }
                _ => no_attr(&Value::Dict(pairs)),
            },
            Value::File(f) => match name {
                "read" => Ok((None, Value::Str(f.content))),
                "readlines" => Ok((
                    None,
                    Value::List(
                        f.content
                            .split_inclusive('\n')
                            .map(|l| Value::Str(l.to_string()))
                            .collect(),
                    ),
                )),
                "write" => {
                    if !f.writable {
                        return err("io.UnsupportedOperation", "not writable");
                    }
                    let data = str_arg(0)?;
                    self.host
                        .write(&f.path, data.as_bytes(), true)
                        .map_err(host_err)?;
                    Ok((None, Value::Int(data.chars().count() as i64)))
                }
                "close" => Ok((None, Value::None)),
                _ => no_attr(&Value::File(f)),
            },
            other => no_attr(&other),
        }
    }
}

fn overflow() -> Exc {
    Exc::Py("OverflowError".into(), "integer overflow".into())
}

pub fn type_name(v: &Value) -> &'static str {
    match v {
        Value::None => "NoneType",
        Value::Bool(_) => "bool",
        Value::Int(_) => "int",
        Value::Float(_) => "float",
        Value::Str(_) => "str",
        Value::List(_) => "list",
        Value::Dict(_) => "dict",
        Value::Func(_) => "function",
        Value::Builtin(_) => "builtin_function_or_method",
        Value::Module(_) => "module",
        Value::File(_) => "TextIOWrapper",
        Value::Exc(..) => "Exception",
        Value::Method(..) => "method",
    }
}

fn truthy(v: &Value) -> bool {
    match v {
        Value::None => false,
        Value::Bool(b) => *b,
        Value::Int(i) => *i != 0,
        Value::Float(f) => *f != 0.0,
        Value::Str(s) => !s.is_empty(),
        Value::List(l) => !l.is_empty(),
        Value::Dict(d) => !d.is_empty(),
        _ => true,
    }
}

fn as_int(v: &Value) -> R<i64> {
    match v {
        Value::Int(i) => Ok(*i),
        Value::Bool(b) => Ok(*b as i64),
        other => err(
            "TypeError",
            format!(
                "'{}' object cannot be interpreted as an integer",
                type_name(other)
            ),
        ),
    }
}

fn as_float(v: &Value) -> R<f64> {
    match v {
        Value::Int(i) => Ok(*i as f64),
        Value::Bool(b) => Ok(*b as i64 as f64),
        Value::Float(f) => Ok(*f),
        other => err(
            "TypeError",
            format!("must be real number, not {}", type_name(other)),
        ),
    }
}

fn round_to(x: f64, n: i64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    if n >= 0 {
        let n = n.min(300) as usize;
        format!("{x:.n$}").parse().unwrap_or(x)
    } else {
        let p = 10f64.powi((-n).min(300) as i32);
        (x / p).round_ties_even() * p
    }
}

fn seq_index(idx: &Value, len: usize) -> R<usize> {
    let i = as_int(idx)?;
    let j = if i < 0 { i + len as i64 } else { i };
    if j < 0 || j >= len as i64 {
        return err("IndexError", "list index out of range");
    }
    Ok(j as usize)
}

fn index(v: &Value, idx: &Value) -> R<Value> {
    match v {
        Value::List(items) => Ok(items[seq_index(idx, items.len())?].clone()),
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            let i = seq_index(idx, chars.len())
                .map_err(|_| Exc::Py("IndexError".into(), "string index out of range".into()))?;
            Ok(Value::Str(chars[i].to_string()))
        }
        Value::Dict(pairs) => pairs
            .iter()
            .find(|(k, _)| py_eq(k, idx))
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Exc::Py("KeyError".into(), repr(idx))),
        other => err(
            "TypeError",
            format!("'{}' object is not subscriptable", type_name(other)),
        ),
    }
}

fn slice(v: &Value, lo: Option<i64>, hi: Option<i64>) -> R<Value> {
    let bounds = |len: usize| {
        let len = len as i64;
        let norm = |x: i64| if x < 0 { (x + len).max(0) } else { x.min(len) };
        let a = lo.map(norm).unwrap_or(0);
        let b = hi.map(norm).unwrap_or(len);
        (a as usize, (b.max(a)) as usize)
    };
    match v {
        Value::List(items) => {
            let (a, b) = bounds(items.len());
            Ok(Value::List(items[a..b].to_vec()))
        }
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            let (a, b) = bounds(chars.len());
            Ok(Value::Str(chars[a..b].iter().collect()))
        }
        other => err(
            "TypeError",
            format!("'{}' object is not subscriptable", type_name(other)),
        ),
    }
}

fn binop(op: BinOp, a: Value, b: Value) -> R<Value> {
    use Value::*;
    match (op, &a, &b) {
        (BinOp::Add, Str(x), Str(y)) => return Ok(Str(format!("{x}{y}"))),
        (BinOp::Add, List(x), List(y)) => return Ok(List(x.iter().chain(y).cloned().collect())),
        (BinOp::Mul, Str(s), Int(n)) | (BinOp::Mul, Int(n), Str(s)) => {
            if *n > MAX_SEQ {
                return err("MemoryError", "string too large for this worker");
            }
            return Ok(Str(s.repeat((*n).max(0) as usize)));
        }
        (BinOp::Mul, List(l), Int(n)) | (BinOp::Mul, Int(n), List(l)) => {
            if *n > MAX_SEQ {
                return err("MemoryError", "list too large for this worker");
            }
            let mut out = Vec::new();
            for _ in 0..(*n).max(0) {
                out.extend(l.iter().cloned());
            }
            return Ok(List(out));
        }
        _ => {}
    }
    let sym = match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::FloorDiv => "//",
        BinOp::Mod => "%",
        BinOp::Pow => "**",
    };
    let unsupported = || {
        err(
            "TypeError",
            format!(
                "unsupported operand type(s) for {sym}: '{}' and '{}'",
                type_name(&a),
                type_name(&b)
            ),
        )
    };
    let int_of = |v: &Value| match v {
        Int(i) => Some(*i),
        Bool(x) => Some(*x as i64),
        _ => Option::None,
    };
    if let (Some(x), Some(y)) = (int_of(&a), int_of(&b)) {
        return Ok(match op {
            BinOp::Add => Int(x.checked_add(y).ok_or_else(overflow)?),
            BinOp::Sub => Int(x.checked_sub(y).ok_or_else(overflow)?),
            BinOp::Mul => Int(x.checked_mul(y).ok_or_else(overflow)?),
            BinOp::Div => {
                if y == 0 {
                    return err("ZeroDivisionError", "division by zero");
                }
                Float(x as f64 / y as f64)
            }
            BinOp::FloorDiv | BinOp::Mod => {
                if y == 0 {
                    return err("ZeroDivisionError", "integer division or modulo by zero");
                }
                let q = x.div_euclid(y);
                let r = x.rem_euclid(y);
                // Python floors toward negative infinity; rem takes the divisor's sign.
                let (q, r) = if r != 0 && y < 0 {
                    (q + 1, r + y)
                } else {
                    (q, r)
                };
                if op == BinOp::FloorDiv {
                    Int(q)
                } else {
                    Int(r)
                }
            }
            BinOp::Pow => {
                if y >= 0 {
                    Int(x
                        .checked_pow(u32::try_from(y).map_err(|_| overflow())?)
                        .ok_or_else(overflow)?)
                } else {
                    if x == 0 {
                        return err(
                            "ZeroDivisionError",
                            "0.0 cannot be raised to a negative power",
                        );
                    }
                    Float((x as f64).powf(y as f64))
                }
            }
        });
    }
    let (Ok(x), Ok(y)) = (as_float(&a), as_float(&b)) else {
        return unsupported();
    };
    Ok(Float(match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => {
            if y == 0.0 {
                return err("ZeroDivisionError", "float division by zero");
            }
            x / y
        }
        BinOp::FloorDiv => {
            if y == 0.0 {
                return err("ZeroDivisionError", "float floor division by zero");
            }
            (x / y).floor()
        }
        BinOp::Mod => {
            if y == 0.0 {
                return err("ZeroDivisionError", "float modulo");
            }
            x - y * (x / y).floor()
        }
        BinOp::Pow => x.powf(y),
    }))
}

fn py_eq(a: &Value, b: &Value) -> bool {
    use Value::*;
    match (a, b) {
        (None, None) => true,
        (Str(x), Str(y)) => x == y,
        (List(x), List(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| py_eq(p, q)),
        (Dict(x), Dict(y)) => {
            x.len() == y.len()
                && x.iter()
                    .all(|(k, v)| y.iter().any(|(k2, v2)| py_eq(k, k2) && py_eq(v, v2)))
        }
        (Int(_) | Float(_) | Bool(_), Int(_) | Float(_) | Bool(_)) => match (a, b) {
            (Int(x), Int(y)) => x == y,
            _ => as_float(a).ok() == as_float(b).ok(),
        },
        (Builtin(x), Builtin(y)) | (Module(x), Module(y)) => x == y,
        _ => false,
    }
}

fn py_cmp(a: &Value, b: &Value) -> R<Ordering> {
    use Value::*;
    match (a, b) {
        (Int(x), Int(y)) => Ok(x.cmp(y)),
        (Int(_) | Float(_) | Bool(_), Int(_) | Float(_) | Bool(_)) => {
            let (x, y) = (as_float(a)?, as_float(b)?);
            Ok(x.partial_cmp(&y).unwrap_or(Ordering::Equal))
        }
        (Str(x), Str(y)) => Ok(x.cmp(y)),
        (List(x), List(y)) => {
            for (p, q) in x.iter().zip(y) {
                let o = py_cmp(p, q)?;
                if o != Ordering::Equal {
                    return Ok(o);
                }
            }
            Ok(x.len().cmp(&y.len()))
        }
        _ => err(
            "TypeError",
            format!(
                "'<' not supported between instances of '{}' and '{}'",
                type_name(a),
                type_name(b)
            ),
        ),
    }
}

fn compare(op: CmpOp, a: &Value, b: &Value) -> R<bool> {
    Ok(match op {
        CmpOp::Eq => py_eq(a, b),
        CmpOp::Ne => !py_eq(a, b),
        CmpOp::Lt => py_cmp(a, b)? == Ordering::Less,
        CmpOp::Gt => py_cmp(a, b)? == Ordering::Greater,
        CmpOp::Le => py_cmp(a, b)? != Ordering::Greater,
        CmpOp::Ge => py_cmp(a, b)? != Ordering::Less,
        CmpOp::In | CmpOp::NotIn => {
            let found = match b {
                Value::Str(s) => match a {
                    Value::Str(n) => s.contains(n.as_str()),
                    other => {
                        return err(
                            "TypeError",
                            format!(
                                "'in <string>' requires string as left operand, not {}",
                                type_name(other)
                            ),
                        )
                    }
                },
                Value::List(items) => items.iter().any(|v| py_eq(v, a)),
                Value::Dict(pairs) => pairs.iter().any(|(k, _)| py_eq(k, a)),
                other => {
                    return err(
                        "TypeError",
                        format!("argument of type '{}' is not iterable", type_name(other)),
                    )
                }
            };
            found == (op == CmpOp::In)
        }
    })
}

/// Python's `repr(float)`: shortest round-trip digits, positional for
/// exponents in [-4, 16), scientific otherwise.
pub fn float_repr(f: f64) -> String {
    if f.is_nan() {
        return "nan".into();
    }
    if f.is_infinite() {
        return if f > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if f == 0.0 {
        return if f.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    let sci = format!("{f:e}");
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if (-4..16).contains(&exp) {
        let s = format!("{f}");
        if s.contains('.') {
            s
        } else {
            format!("{s}.0")
        }
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

fn str_repr(s: &str) -> String {
    let q = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(q);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == q => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(q);
    out
}

pub fn repr(v: &Value) -> String {
    match v {
        Value::Str(s) => str_repr(s),
        Value::List(items) => format!(
            "[{}]",
            items.iter().map(repr).collect::<Vec<_>>().join(", ")
        ),
        Value::Dict(pairs) => format!(
            "{{{}}}",
            pairs
                .iter()
                .map(|(k, v)| format!("{}: {}", repr(k), repr(v)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        Value::Exc(k, m) => format!("{k}({})", str_repr(m)),
        other => to_str(other),
    }
}

pub fn to_str(v: &Value) -> String {
    match v {
        Value::None => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => float_repr(*f),
        Value::Str(s) => s.clone(),
        Value::Func(d) => format!("<function {}>", d.name),
        Value::Builtin(n) => format!("<built-in function {n}>"),
        Value::Module(m) => format!("<module '{m}'>"),
        Value::File(f) => format!("<_io.TextIOWrapper name='{}'>", f.path),
        Value::Exc(_, m) => m.clone(),
        Value::Method(_, n) => format!("<built-in method {n}>"),
        Value::List(_) | Value::Dict(_) => repr(v),
    }
}

fn group_thousands(digits: &str) -> String {
    let (int_part, rest) = match digits.find('.') {
        Some(p) => digits.split_at(p),
        None => (digits, ""),
    };
    let (sign, body) = match int_part.strip_prefix('-') {
        Some(b) => ("-", b),
        None => ("", int_part),
    };
    let mut out = String::new();
    for (i, c) in body.chars().enumerate() {
        if i > 0 && (body.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    format!("{sign}{out}{rest}")
}

/// Subset of the format-spec mini-language: `[width][,][.precision][f|%|d|e]`.
fn format_spec(v: &Value, spec: &str) -> R<String> {
    if spec.is_empty() {
        return Ok(to_str(v));
    }
    let bad = || err("ValueError", format!("Invalid format specifier '{spec}'"));
    let mut rest = spec;
    let width_len = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    let width: usize = if width_len > 0 {
        rest[..width_len].parse().unwrap_or(0)
    } else {
        0
    };
    rest = &rest[width_len..];
    let grouped = rest.starts_with(',');
    if grouped {
        rest = &rest[1..];
    }
    let mut precision = None;
    if let Some(r) = rest.strip_prefix('.') {
        let n = r.chars().take_while(|c| c.is_ascii_digit()).count();
        if n == 0 {
            return bad();
        }
        precision = Some(r[..n].parse::<usize>().unwrap_or(6));
        rest = &r[n..];
    }
    let body = match (rest, v) {
        ("", Value::Str(s)) => match precision {
            Some(p) => s.chars().take(p).collect(),
            None => s.clone(),
        },
        ("d", Value::Int(i)) => i.to_string(),
        ("f", _) | ("F", _) => format!("{:.*}", precision.unwrap_or(6), as_float(v)?),
        ("e", _) => {
            let s = format!("{:.*e}", precision.unwrap_or(6), as_float(v)?);
            let (m, e) = s.split_once('e').unwrap_or((&s, "0"));
            let e: i32 = e.parse().unwrap_or(0);
            format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
        }
        ("%", _) => format!("{:.*}%", precision.unwrap_or(6), as_float(v)? * 100.0),
        ("", Value::Int(i)) if precision.is_none() => i.to_string(),
        ("", Value::Float(f)) => match precision {
            Some(p) => {
                let r = round_to(*f, p as i64);
                float_repr(r)
            }
            None => float_repr(*f),
        },
        ("", other) if precision.is_none() => to_str(other),
        _ => return bad(),
    };
    let body = if grouped {
        group_thousands(&body)
    } else {
        body
    };
    let pad = width.saturating_sub(body.chars().count());
    Ok(if matches!(v, Value::Str(_)) {
        format!("{body}{}", " ".repeat(pad))
    } else {
        format!("{}{body}", " ".repeat(pad))
    })
}
