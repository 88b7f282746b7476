from functools import wraps

from factoformer_project import settings

_configured = False


def configure_opentelemetry():
    """Install a tracer provider when tracing is enabled"""
    global _configured

    if not settings.OTEL_ENABLED or _configured:
        return

    from opentelemetry import trace
    from opentelemetry.sdk.resources import Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter

    resource = Resource.create({
        'service.name': settings.OTEL_SERVICE_NAME,
        'service.version': settings.OTEL_SERVICE_VERSION,
    })
    provider = TracerProvider(resource=resource)
    if settings.OTEL_EXPORTER_TYPE == 'console':
        provider.add_span_processor(BatchSpanProcessor(ConsoleSpanExporter()))
    trace.set_tracer_provider(provider)
    _configured = True


def get_tracer(name: str = None):
    """Get a tracer instance"""
    from opentelemetry import trace
    return trace.get_tracer(name or __name__)


def trace_function(name: str = None, attributes: dict = None):
    """Decorator to trace function execution"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            if not settings.OTEL_ENABLED:
                return func(*args, **kwargs)

            tracer = get_tracer(func.__module__)
            span_name = name or f"{func.__module__}.{func.__name__}"

            with tracer.start_as_current_span(span_name) as span:
                if attributes:
                    span.set_attributes(attributes)

                span.set_attribute("function.name", func.__name__)
                span.set_attribute("function.module", func.__module__)

                try:
                    result = func(*args, **kwargs)
                    span.set_attribute("function.result_type", type(result).__name__)
                    return result
                except Exception as e:
                    span.record_exception(e)
                    from opentelemetry.trace import StatusCode
                    span.set_status(StatusCode.ERROR, str(e))
                    raise

        return wrapper
    return decorator
