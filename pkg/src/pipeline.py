"""
Stage orchestration for the oscilla subcommands
Each stage reads the RunConfig, writes its artifacts atomically and records them in a RunReport
"""
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core_model import normalization_report
from src.discretization import inf_sup_constant
from src.errors import SolverError, ValidationError
from src.fsi_system import FsiPencilFamily, FsiProblem, FsiSystem
from src.hopf_engine import build_bases, classify_criticality, continue_branch, floquet_null_space, parity_defect
from src.linear_operators import assemble_L0, assemble_L2, assemble_S011, dump_operator, random_solenoidal
from src.mesh import build_truncated_domain, mesh_quality, write_field
from src.periodic_modes import ModeSolver, assemble_M, energy_identity_report, growth_report, resonance_scan
from src.reporting import RunReport, emit_plots, write_csv, write_json
from src.run_config import RunConfig
from src.spectral import HopfCandidate, candidate_at, eigs_near_axis, find_crossing, necessary_guard
from src.surrogates import make_case
from src.time_stepper import energy_balance, kinematic_defect, observables, simulate

logger = logging.getLogger(__name__)


class Pipeline:
    """One run: configuration, output directory and the lazily built FSI problem"""

    def __init__(self, config: RunConfig, subcommand: str, jobs: int = 1, dump_operators: bool = False):
        self.config = config
        self.jobs = jobs
        self.dump_operators = dump_operators
        self.output_dir = config.output_dir
        os.makedirs(self.output_dir, exist_ok=True)
        self.report = RunReport(self.output_dir, subcommand)
        self.report.add_file(write_json(self.report.path('effective_config.json'), config.effective()))
        self.report.set('run', {'seed': config.seed, 'jobs': jobs, 'config_source': config.source})
        self._problem: Optional[FsiProblem] = None

    @property
    def problem(self) -> FsiProblem:
        if self._problem is None:
            self.report.start('discretize')
            params = self.config.model()
            mc = self.config['mesh']
            mesh = build_truncated_domain(params.geometry, mc['R_trunc'], mc['resolution'],
                                          wake_angle_deg=mc['wake_angle_deg'], grading=mc['grading'],
                                          outflow_angle_deg=mc['outflow_angle_deg'])
            sc = self.config['steady']
            self._problem = FsiProblem(params, mesh, solver_kw={'tol': sc['tol_newton'], 'max_iter': sc['max_iter'],
                                                                 'min_step': sc['min_step']})
            quality = mesh_quality(mesh)
            beta = inf_sup_constant(self._problem.space, self._problem.ops)
            self.report.set('model', normalization_report(params))
            self.report.set('mesh', {**quality, 'inf_sup': beta})
            self.report.stop('discretize')
        return self._problem

    def _eig_kw(self) -> Dict:
        sc = self.config['spectral']
        return {'n_eigs': sc['n_eigs'], 'n_shifts': sc['n_shifts'], 're_strip': sc['re_strip'],
                'residual_tol': sc['residual_tol'], 'jobs': self.jobs, 'seed': self.config.seed,
                'method': sc['method']}

    def _candidate_kw(self) -> Dict:
        sc = self.config['spectral']
        return {'kmax': sc['kmax'], 'tol_simplicity': sc['tol_simplicity'], 'tol_resonance': sc['tol_resonance'],
                **self._eig_kw()}

    def _write(self, name: str, header: Sequence[str], rows) -> str:
        return self.report.add_file(write_csv(self.report.path(name), header, rows))

    def _write_json(self, name: str, payload: Dict) -> str:
        return self.report.add_file(write_json(self.report.path(name), payload))

    def _dump(self, lam: float):
        if not self.dump_operators:
            return
        problem = self.problem
        model = problem.model_at(lam)
        state = problem.steady(lam)
        ops = {'L0': assemble_L0(model, problem.ops), 'L2': assemble_L2(model, state, problem.ops),
               'S011': assemble_S011(state, problem.derivative(lam), model, problem.ops)}
        for name, op in ops.items():
            self.report.add_file(dump_operator(op, self.report.path(os.path.join('operators', f'{name}_{lam:g}.txt'))))

    def finish(self) -> str:
        path = self.report.write()
        logger.info("Run report written to %s", path)
        return path

    def steady(self, lambdas: Optional[Sequence[float]] = None) -> List:
        lambdas = sorted(float(l) for l in (lambdas or self.config['steady']['lambda'] or [self.config.model().lam]))
        problem = self.problem
        self.report.start('steady')
        states = [problem.steady(lam) for lam in lambdas]
        d = problem.space.d
        header = ['lambda', 'drag', 'lift'] + [f'chi0_{c}' for c in 'xyz'[:d]] + ['residual', 'iters']
        self._write('steady.csv', header,
                    ([s.lam, s.drag, s.lift, *s.chi0, s.residual_norm, s.newton_iterations] for s in states))
        for s in states:
            u = problem.space.vertex_values(s.velocity)
            columns = {f'u{a}': u[a] for a in range(d)}
            columns['p'] = s.pressure
            path = self.report.path(os.path.join('fields', f'steady_{s.lam:g}.dat'))
            os.makedirs(os.path.dirname(path), exist_ok=True)
            write_field(path, problem.mesh, columns, {'lambda': f'{s.lam:g}'})
            self.report.add_file(path)
        self.report.stop('steady')
        self.report.set('steady', {'points': [{'lambda': s.lam, 'drag': s.drag, 'lift': s.lift,
                                               'residual': s.residual_norm} for s in states]})
        return states

    def eigs(self, lam: float, window: Optional[Tuple[float, float]] = None) -> List:
        sc = self.config['spectral']
        zmin, zmax = window or (sc['zeta_min'], sc['zeta_max'])
        self.report.start('eigs')
        pencil = FsiPencilFamily(self.problem).pencil(lam)
        pairs = eigs_near_axis(pencil, zmin, zmax, **self._eig_kw())
        rows = [[p.nu.real, p.nu.imag, p.residual] for p in pairs]
        self._write(f'spectrum_{lam:g}.csv', ['re', 'im', 'residual'], rows)
        self._write('eigs.csv', ['re', 'im', 'residual'], rows)
        self.report.stop('eigs')
        self.report.set('eigs', {'lambda': lam, 'window': [zmin, zmax], 'count': len(pairs)})
        self._dump(lam)
        return pairs

    def hopf(self, lam_range: Optional[Tuple[float, float]] = None) -> HopfCandidate:
        sc = self.config['spectral']
        lam_range = lam_range or (tuple(sc['lambda_range']) if sc['lambda_range'] else None)
        family = FsiPencilFamily(self.problem)
        self.report.start('hopf')
        if lam_range:
            candidate = find_crossing(family, lam_range, sc['zeta_min'], sc['zeta_max'], **self._candidate_kw())
        else:
            candidate = candidate_at(family, self.config.model().lam, sc['zeta_min'], sc['zeta_max'],
                                     **self._candidate_kw())
            if candidate is None:
                raise SolverError("no eigenvalue near the imaginary axis")
        guard = necessary_guard(candidate)
        self._write_json('hopf_candidate.json', {**candidate.summary(), 'guard': guard,
                                                 'simplicity': candidate.simplicity,
                                                 'nonresonance': candidate.nonresonance})
        self.report.stop('hopf')
        self.report.set('hopf', {**candidate.summary(), 'guard': guard})
        self._dump(candidate.lam_o)
        return candidate

    def modes(self, zeta: Optional[float] = None, lam: Optional[float] = None, kmax: Optional[int] = None) -> Dict:
        mc = self.config['modes']
        zeta = zeta if zeta is not None else mc['zeta']
        lam = lam if lam is not None else (mc['lambda'] if mc['lambda'] is not None else self.config.model().lam)
        kmax = kmax or mc['kmax']
        if zeta is None:
            raise ValidationError("modes.zeta is required (config key or --zeta)")
        problem = self.problem
        params = problem.params
        solver = ModeSolver(problem.ops, zeta, lam, jobs=self.jobs)
        self.report.start('modes')
        rows = solver.modes_report(kmax)
        norm_keys = [k for k in rows[0] if k not in ('k', 'm', 'residual')] if rows else []
        self._write('modes.csv', ['k', 'm'] + norm_keys + ['residual'],
                    ([r['k'], r['m']] + [r[n] for n in norm_keys] + [r['residual']] for r in rows))
        singular = {}
        for k in range(1, kmax + 1):
            K = solver.K_matrix(k)
            self._write_json(f'Kmat_{k}.json', {'k': k, 'zeta0': zeta, 'lambda_o': lam, 'entries': K.entries,
                                                'min_singular_value': K.min_singular_value})
            if not params.fixed_body and params.varpi > 0:
                M = assemble_M(k, zeta, params.A, params.varpi, K)
                singular[k] = M.min_singular_value
                self._write_json(f'Mmat_{k}.json', {'k': k, 'varpi': params.varpi, 'entries': M.entries,
                                                    'min_singular_value': M.min_singular_value,
                                                    'condition_number': M.condition_number})
        rng = np.random.default_rng(self.config.seed)
        alphas = rng.standard_normal((4, problem.space.d)) + 1j * rng.standard_normal((4, problem.space.d))
        energy = energy_identity_report(solver, 1, alphas, params.varpi if params.varpi > 0 else 1.0,
                                        None if params.fixed_body else params.A)
        growth = growth_report(solver, range(1, kmax + 1))
        self.report.stop('modes')
        summary = {'zeta0': zeta, 'lambda_o': lam, 'kmax': kmax, 'M_min_singular_values': singular,
                   'energy_identity': energy, 'growth': growth}
        self.report.set('modes', summary)
        return summary

    def scan(self, varpi_grid: Optional[Sequence[float]] = None, zeta: Optional[float] = None,
             lam: Optional[float] = None) -> Dict:
        mc = self.config['modes']
        zeta = zeta if zeta is not None else mc['zeta']
        lam = lam if lam is not None else (mc['lambda'] if mc['lambda'] is not None else self.config.model().lam)
        if zeta is None:
            raise ValidationError("modes.zeta is required (config key or --zeta)")
        if varpi_grid is None:
            lo, hi, count = mc['varpi_grid']
            varpi_grid = np.logspace(np.log10(lo), np.log10(hi), int(count))
        problem = self.problem
        if problem.params.fixed_body:
            raise ValidationError("resonance scan needs a spring-mounted body (model.fixed_body = false)")
        solver = ModeSolver(problem.ops, zeta, lam, jobs=self.jobs)
        F = np.zeros(problem.space.d, dtype=complex)
        F[1] = 1.0
        self.report.start('scan')
        result = resonance_scan(solver, varpi_grid, problem.params.A, F, kmax=mc['kmax'], kbar=mc['resonance_k'])
        self._write('resonance.csv', ['varpi', 'k', 'xi_abs', 'min_singular_value'],
                    ([r['varpi'], r['k'], r['xi_abs'], r['min_singular_value']] for r in result['rows']))
        self.report.stop('scan')
        self.report.set('scan', {k: v for k, v in result.items() if k != 'rows'})
        return result

    def _branch(self, system, candidate: HopfCandidate, eps_max: float, points: int,
                kmax: Optional[int] = None) -> Dict:
        bc = self.config['branch']
        kmax = kmax or bc['kmax']
        if points < 4:
            raise ValidationError("branch.points must be at least 4")
        basis = build_bases(candidate, system.gram)
        eps_grid = np.linspace(-eps_max, eps_max, points)
        self.report.start('branch')
        branch = continue_branch(system, basis, eps_grid, kmax=kmax, tol=bc['tol'], max_iter=bc['max_iter'])
        gram = system.gram
        self._write('branch.csv', ['epsilon', 'mu', 'zeta', 'amplitude_L2', 'residual', 'iters'],
                    ([p.epsilon, p.mu, p.zeta, p.amplitude_L2(gram), p.residual, p.iterations] for p in branch))
        criticality = classify_criticality(branch, bc['noise_floor'])
        payload = {
            'lambda_o': candidate.lam_o,
            'zeta0': candidate.zeta0,
            're_nu_prime': candidate.re_nu_prime,
            'kmax': kmax,
            'criticality': criticality,
            'parity_defect': parity_defect(branch),
            'side_conditions': [{'epsilon': p.epsilon, 'values': p.side_conditions} for p in branch],
            'max_residual': float(max(p.residual for p in branch)),
            'floquet': {k: v for k, v in floquet_null_space(system, basis, seed=self.config.seed).items()
                        if k != 'basis'},
        }
        self._write_json('branch_report.json', payload)
        self.report.stop('branch')
        self.report.set('branch', payload)
        return payload

    def branch(self, eps_max: Optional[float] = None, points: Optional[int] = None) -> Dict:
        bc = self.config['branch']
        candidate = self.hopf()
        guard = necessary_guard(candidate)
        if not guard['passed']:
            logger.warning("Branch not continued: %s", guard['message'])
            result = {'accepted': False, 'candidate': candidate.summary(), 'guard': guard,
                      'message': guard['message']}
            self.report.set('branch', result)
            return result
        system = FsiSystem(self.problem, candidate.lam_o, bc['mu_mode'])
        payload = self._branch(system, candidate, eps_max or bc['epsilon_max'], points or bc['points'])
        return {**payload, 'accepted': True, 'message': guard['message']}

    def simulate(self, lam: Optional[float] = None, t_final: Optional[float] = None,
                 dt: Optional[float] = None) -> Dict:
        sc = self.config['simulate']
        lam = lam if lam is not None else (sc['lambda'] if sc['lambda'] is not None else self.config.model().lam)
        t_final = t_final or sc['t_final']
        dt = dt or sc['dt']
        problem = self.problem
        system = FsiSystem(problem, lam, 'linear')
        spc = self.config['spectral']
        candidate = candidate_at(FsiPencilFamily(problem), lam, spc['zeta_min'], spc['zeta_max'],
                                 **self._candidate_kw())
        if candidate is not None:
            init = sc['epsilon'] * build_bases(candidate, problem.ops.gram).v1[0]
        else:
            logger.warning("No eigenvector near the axis at lambda = %g; random solenoidal start", lam)
            x = random_solenoidal(problem.ops, np.random.default_rng(self.config.seed))
            init = sc['epsilon'] * x / np.sqrt(abs(problem.ops.inner(x, x)))
        self.report.start('simulate')
        traj = simulate(system, init, t_final, dt, stride=sc['stride'], blowup=sc['blowup'])
        self._write('trajectory.csv', traj.header(), traj.rows())
        for t, x in traj.snapshots:
            u = problem.space.vertex_values(problem.space.field(x))
            path = self.report.path(os.path.join('fields', f'perturbation_{t:.6g}.dat'))
            os.makedirs(os.path.dirname(path), exist_ok=True)
            write_field(path, problem.mesh, {f'w{a}': u[a] for a in range(problem.space.d)}, {'t': f'{t:.6g}'})
            self.report.add_file(path)
        self.report.stop('simulate')
        obs = observables(traj.t, traj.signal)
        summary = {'lambda': lam, 'dt': dt, 't_final': traj.final_time, 'signal': traj.signal_name,
                   'observables': obs, 'energy_balance': energy_balance(traj),
                   'kinematic_defect': kinematic_defect(traj), 'max_cfl': traj.max_cfl,
                   'predicted_growth_rate': None if candidate is None else -candidate.nu0.real}
        self.report.set('simulate', summary)
        return summary

    def surrogate(self, case: str, eps_max: Optional[float] = None, points: Optional[int] = None) -> Dict:
        system = make_case(case)
        spc, bc = self.config['spectral'], self.config['branch']
        zeta_ref = system.reference['zeta0']
        self.report.set('surrogate', {'case': case, 'reference': system.reference})
        try:
            candidate = candidate_at(system, system.lam_c, spc['zeta_min'], max(spc['zeta_max'], 1.5 * zeta_ref),
                                     **{**self._candidate_kw(), 'method': 'dense'})
        except SolverError as exc:
            result = {'case': case, 'accepted': False, 'message': str(exc)}
            self._write_json('surrogate_report.json', result)
            self.report.set('surrogate', result)
            return result
        guard = necessary_guard(candidate)
        result = {'case': case, 'candidate': candidate.summary(), 'guard': guard, 'accepted': guard['passed']}
        if guard['passed']:
            result['branch'] = self._branch(system, candidate, eps_max or bc['epsilon_max'], points or bc['points'])
        result['message'] = guard['message']
        self._write_json('surrogate_report.json', result)
        self.report.set('surrogate', {k: v for k, v in result.items() if k != 'branch'})
        return result

    def hopf_pipeline(self) -> Dict:
        """steady -> eigs -> hopf -> branch on one discretization"""
        spc = self.config['spectral']
        lams = list(spc['lambda_range']) or [self.config.model().lam]
        self.steady(lams)
        self.eigs(lams[-1])
        return self.branch()


def run_emit_plots(artifact_dir: str) -> List[str]:
    if not os.path.isdir(artifact_dir):
        raise ValidationError(f"artifact directory not found: {artifact_dir}")
    return emit_plots(artifact_dir)
