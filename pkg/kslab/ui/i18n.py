"""
KS Lab - i18n (Internationalization)
Message catalog for English and Italian
"""

TRANSLATIONS = {
    "en": {
        # Initial conditions
        "initial.duplicate_resample": "Duplicate initial positions, resampling (attempt {attempt})",

        # Dynamics
        "dynamics.substep_floor": "Step size held at the substep floor from t={t} (min pair distance {distance}), integration continues",
        "dynamics.blowup": "Triple collapse at t={t} (N={n}, theta={theta}); trajectory frozen",

        # Diagnostics
        "diagnostics.dirac_initial_law": "Initial law is a single atom: the explosion-time summary assumes a diffuse initial law",
        "diagnostics.collapse_at_start": "N={n}: {count} of {total} replicas already satisfy the k=3, ell={ell} collapse at t=0; pick a more diffuse initial law or a larger ell",
        "measure.coarse_quadrature": "Snapshot spacing {step} exceeds the quadrature limit {limit}; residual is approximate",
        "bessel.hitting": "Squared Bessel d={dimension}: zero-hitting fraction {fraction} (dt={dt})",

        # Runner
        "runner.cell_start": "Cell {cell}: theta={theta}, N={n}, {replicas} replicas",
        "runner.cell_done": "Cell {cell} done: {blowups}/{replicas} replicas blew up",
        "runner.cell_failed": "Cell {cell} (theta={theta}, N={n}) failed: {error}",
        "runner.diagnostic_skipped": "Diagnostic {name} skipped: {reason}",
        "runner.sweep_partial": "Sweep is partial: {failed} of {total} cells failed",
        "pool.starting": "Starting {workers} workers for {tasks} tasks",

        # Registry
        "registry.initialized": "Registry initialized at {path}",
        "registry.init_failed": "Failed to initialize registry: {error}",

        # Verify
        "verify.criterion": "Criterion {name}: {status}",

        # CLI
        "cli.welcome": "KS Lab v{version}",
        "cli.run_done": "Run written to {path}",
        "cli.sweep_done": "Sweep written to {path} ({done}/{total} cells completed)",
        "cli.verify_passed": "All applicable criteria passed",
        "cli.verify_failed": "{count} criteria failed",
        "cli.interrupted": "Interrupted by user",

        # Errors
        "error.validation": "Invalid configuration: {error}",
        "error.runtime": "Run failed: {error}",
    },
    "it": {
        # Initial conditions
        "initial.duplicate_resample": "Posizioni iniziali duplicate, ricampionamento (tentativo {attempt})",

        # Dynamics
        "dynamics.substep_floor": "Passo bloccato al minimo da t={t} (distanza minima {distance}), l'integrazione continua",
        "dynamics.blowup": "Collasso triplo a t={t} (N={n}, theta={theta}); traiettoria congelata",

        # Diagnostics
        "diagnostics.dirac_initial_law": "Legge iniziale con un solo atomo: il riepilogo dei tempi di esplosione presuppone una legge iniziale diffusa",
        "diagnostics.collapse_at_start": "N={n}: {count} repliche su {total} soddisfano già il collasso k=3, ell={ell} a t=0; scegliere una legge iniziale più diffusa o un ell maggiore",
        "measure.coarse_quadrature": "Spaziatura degli snapshot {step} oltre il limite di quadratura {limit}; residuo approssimato",
        "bessel.hitting": "Bessel al quadrato d={dimension}: frazione che tocca zero {fraction} (dt={dt})",

        # Runner
        "runner.cell_start": "Cella {cell}: theta={theta}, N={n}, {replicas} repliche",
        "runner.cell_done": "Cella {cell} completata: {blowups}/{replicas} repliche esplose",
        "runner.cell_failed": "Cella {cell} (theta={theta}, N={n}) fallita: {error}",
        "runner.diagnostic_skipped": "Diagnostica {name} saltata: {reason}",
        "runner.sweep_partial": "Sweep parziale: {failed} celle su {total} fallite",
        "pool.starting": "Avvio di {workers} processi per {tasks} compiti",

        # Registry
        "registry.initialized": "Registro inizializzato in {path}",
        "registry.init_failed": "Inizializzazione del registro fallita: {error}",

        # Verify
        "verify.criterion": "Criterio {name}: {status}",

        # CLI
        "cli.welcome": "KS Lab v{version}",
        "cli.run_done": "Esecuzione scritta in {path}",
        "cli.sweep_done": "Sweep scritto in {path} ({done}/{total} celle completate)",
        "cli.verify_passed": "Tutti i criteri applicabili superati",
        "cli.verify_failed": "{count} criteri falliti",
        "cli.interrupted": "Interrotto dall'utente",

        # Errors
        "error.validation": "Configurazione non valida: {error}",
        "error.runtime": "Esecuzione fallita: {error}",
    }
}


class I18n:
    """Internationalization helper"""

    def __init__(self, language: str = "en"):
        self.language = language if language in TRANSLATIONS else "en"

    def get(self, key: str, **kwargs) -> str:
        """
        Get translated string

        Args:
            key: Translation key (e.g., "runner.cell_start")
            **kwargs: Format arguments

        Returns:
            str: Translated and formatted string
        """
        text = TRANSLATIONS[self.language].get(key, key)
        if kwargs:
            try:
                return text.format(**kwargs)
            except KeyError:
                return text
        return text

    def set_language(self, language: str):
        """Set active language"""
        if language in TRANSLATIONS:
            self.language = language


# Global instance
_i18n = I18n()


def get_i18n() -> I18n:
    """Get global i18n instance"""
    return _i18n


def t(key: str, **kwargs) -> str:
    """Shorthand for translation"""
    return _i18n.get(key, **kwargs)
